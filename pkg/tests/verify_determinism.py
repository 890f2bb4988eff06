"""Run with e.g. ``mpiexec -n 4 python tests/verify_determinism.py``.

Every rank simulates its share of a small scenario; rank 0 then repeats the
whole run on its own and checks that the operating characteristics match.
"""

import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.mpi_comm import Communicator, SerialComm
from src.trial_sim import parse_scenario, simulate_scenario

SCENARIO = """\
name = determinism
n0 = 40
n1 = 40
accrual = 1
info_fractions = 0.5,1
methods = adjusted,km
grid_points = 201
replicates = 24
calibration_replicates = 8
calibration_grid = 5
seed = 11
"""


def test_rank_count_independence():
    comm = Communicator()
    scenario = parse_scenario(SCENARIO)

    parallel = simulate_scenario(scenario, comm=comm).oc.to_csv()
    if comm.rank != 0:
        return
    print(f"Simulated {scenario.replicates} replicates on {comm.size} ranks")
    serial = simulate_scenario(scenario, comm=Communicator(SerialComm())).oc.to_csv()

    if parallel == serial:
        print("SUCCESS: OC table identical to the single-rank run.")
    else:
        print("FAILURE: OC table depends on the number of ranks.")
        print(parallel)
        print(serial)


if __name__ == "__main__":
    test_rank_count_independence()
