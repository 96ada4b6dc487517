import textwrap

import pytest

TINY_AMZI = """
[run]
seed = 5

[laser]
preset = laser
linewidth = 1000

[fibre.smf]
preset = smf_like

[channel.smf]
fibre = smf
tau = 9.9e-6
visibility_cap = 0.99

[channel.hcf]
tau = 6.6e-6
insertion_loss_arm1 = 6.0
insertion_loss_arm2 = 5.6
visibility_cap = 0.93

[detector]
responsivity = 1000
additive_noise_rms = 0.002

[sampling]
sets = 20e3:0.5, 2e6:0.05

[analysis]
welch_window = 4096
calibration_samples = 8192
trace_excerpt = 0.01
write_traces = true
"""

TINY_TFQKD = """
[run]
seed = 3

[tfqkd]
mean_photons_per_pulse = 0.02
dark_rate = 0
bin_duration = 50e-6
drift_mean_photons_per_pulse = 0.2
drift_diffusion = 6000
drift_duration = 0.05
keyed_visibility = 0.965
keyed_duration = 0.005
"""


@pytest.fixture
def write_cfg(tmp_path):
    def _write(text, name="scenario.cfg"):
        p = tmp_path / name
        p.write_text(textwrap.dedent(text).lstrip())
        return p
    return _write
