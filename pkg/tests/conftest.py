import numpy as np
import pytest

HMD_PREAMBLE = (
    "Testland, Deaths (period 1x1)\tLast modified: 01 Jan 2024;  Methods Protocol: v6 (2017)\n"
    "\n"
)


def hmd_text(ages, years, values, preamble=HMD_PREAMBLE):
    """HMD 1x1 text with ``values`` (p x n) in every value column."""
    lines = [preamble + "  Year          Age             Female            Male           Total"]
    for j, year in enumerate(years):
        for i, age in enumerate(ages):
            v = values[i, j]
            cell = "." if np.isnan(v) else f"{v:.6f}"
            label = f"{age}+" if age == 110 else str(age)
            lines.append(f"  {year}          {label:<6}   {cell}   {cell}   {cell}")
    return "\n".join(lines) + "\n"


@pytest.fixture
def hmd_pair(tmp_path):
    """Deaths and exposures files for a small Gompertz-like population."""
    ages = np.arange(60, 66)
    years = np.arange(2000, 2009)
    rng = np.random.default_rng(11)
    N = rng.uniform(2e4, 5e4, (len(ages), len(years)))
    m = np.exp(-5.0 + 0.1 * (ages[:, None] - 60) - 0.01 * (years[None, :] - 2000))
    D = np.round(N * m) + 1.0
    dpath = tmp_path / "Deaths_1x1.txt"
    epath = tmp_path / "Exposures_1x1.txt"
    dpath.write_text(hmd_text(ages, years, D))
    epath.write_text(hmd_text(ages, years, N))
    return dpath, epath, ages, years, np.round(D, 6), np.round(N, 6)
