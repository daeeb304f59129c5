import os
import sys

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, _ROOT)

import numpy as np
import pytest

from src.drive.perunit import PerUnitParams, build_discrete, rated_torque, steady_state_flux
from src.drive.augmentation import assemble_augmented
from src.adp.trainer import QuadValueFunction

# 转差 1% 的工作点 (单位参考电流在线性调制区内)
OMEGA_R = 0.99


@pytest.fixture
def params():
    return PerUnitParams(omega_r=OMEGA_R)


@pytest.fixture
def t_rated(params):
    """单位参考幅值对应的额定转矩 (标幺)"""
    return rated_torque(params)


@pytest.fixture
def dm(params):
    return build_discrete(params)


@pytest.fixture
def model(dm, params):
    return assemble_augmented(dm, params, gamma=0.95, delta=4.0, fsw_target=300.0)


@pytest.fixture
def tail(model):
    """合成尾代价 V = ℓ/(1−γ)，不依赖 SDP 求解器"""
    P = model.C.T @ model.C / (1.0 - model.gamma)
    return QuadValueFunction(P, np.zeros(model.n), 0.0)


@pytest.fixture
def x_ph(params):
    """额定工作点: i = (0, −1)，转子磁链取对应的正弦稳态值"""
    psi = steady_state_flux(-1j, params)
    return np.array([0.0, -1.0, psi.real, psi.imag])


@pytest.fixture
def x0(x_ph):
    """x_ph + 同相参考 + 滤波器处于 f* + u_prev = 0"""
    return np.concatenate([x_ph, [0.0, -1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]])
