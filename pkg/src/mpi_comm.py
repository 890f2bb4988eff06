import logging

logger = logging.getLogger(__name__)


class SerialComm:
    """Single-rank stand-in used when no MPI runtime is available."""

    def Get_rank(self):
        return 0

    def Get_size(self):
        return 1

    def Barrier(self):
        pass

    def allgather(self, sendobj):
        return [sendobj]


def world_comm():
    try:
        from mpi4py import MPI
    except (ImportError, RuntimeError) as exc:
        logger.info("mpi4py unavailable (%s); running on a single rank", exc)
        return SerialComm()
    return MPI.COMM_WORLD


class Communicator:
    """Splits Monte Carlo replicates over ranks and collects them back.

    Replicates are handed out in contiguous blocks, the first ``total % size``
    ranks taking one extra, so every rank can work out its share locally.
    """

    def __init__(self, comm=None):
        self.comm = comm if comm is not None else world_comm()
        self.rank = self.comm.Get_rank()
        self.size = self.comm.Get_size()

    @property
    def is_root(self):
        return self.rank == 0

    def partition(self, total, rank=None):
        rank = self.rank if rank is None else rank
        per_rank = total // self.size
        remainder = total % self.size
        count = per_rank + (1 if rank < remainder else 0)
        offset = rank * per_rank + min(rank, remainder)
        return range(offset, offset + count)

    def gather_replicates(self, local):
        # ordered by replicate index
        if self.size == 1:
            merged = dict(local)
        else:
            merged = {}
            for part in self.comm.allgather(local):
                merged.update(part)
        return {index: merged[index] for index in sorted(merged)}

    def barrier(self):
        if self.size > 1:
            self.comm.Barrier()
