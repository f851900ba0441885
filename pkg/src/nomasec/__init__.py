"""Energy-minimal secure partial offloading over uplink NOMA."""

from .benchmarks import BenchmarkResult, run_scheme, solve_fixed_sic, solve_no_eve, solve_oma, solve_proposed
from .model import (Allocation, ChannelRealization, SystemConfig, dbm_to_watts, draw_instance,
                    feasibility_check, link_metrics, max_secret_rate, sample_channels, sinr_vector,
                    total_energy)
from .pdd import PddConfig, SolveResult, solve

__version__ = "0.1.0"
