"""Physical constants and canonical unit system.

Lengths are in AU and the time unit is chosen so the solar gravitational
parameter equals one.
"""
import math

MU_SUN_KM3_S2 = 1.32712440018e11
AU_KM = 1.495978707e8
DAY_S = 86400.0
G0 = 9.80665  # m/s^2

TU_S = math.sqrt(AU_KM**3 / MU_SUN_KM3_S2)
TU_DAYS = TU_S / DAY_S
VU_KMS = AU_KM / TU_S
VU_MS = VU_KMS * 1e3
ACC_UNIT_MS2 = VU_MS / TU_S

MU = 1.0  # canonical heliocentric gravitational parameter

# spacecraft defaults (NEXT-class engine)
M_DRY_KG = 1000.0
M0_RANGE_KG = (1000.0, 3000.0)
ISP_S = 4190.0
T_MAX_N = 0.236
N_SEGMENTS = 20

TOF_INI_RANGE_DAYS = (60.0, 4 * 365.0)
EPOCH_RANGE_MJD = (58849.0, 73459.0)  # 2020-01-01 .. 2060-01-01


def days_to_tu(days):
    return days / TU_DAYS


def tu_to_days(tu):
    return tu * TU_DAYS
