import unittest

from src.mpi_comm import Communicator, SerialComm
from tests.mocks import MockComm


class TestPartition(unittest.TestCase):
    def test_blocks_cover_everything_once(self):
        for total in (0, 1, 7, 10, 101):
            for size in (1, 2, 3, 4, 8):
                blocks = [Communicator(MockComm(rank, size)).partition(total) for rank in range(size)]
                indices = [i for block in blocks for i in block]
                self.assertEqual(indices, list(range(total)))

    def test_remainder_goes_to_first_ranks(self):
        sizes = [len(Communicator(MockComm(rank, 4)).partition(10)) for rank in range(4)]
        self.assertEqual(sizes, [3, 3, 2, 2])

    def test_explicit_rank(self):
        comm = Communicator(MockComm(0, 3))
        self.assertEqual(comm.partition(9, rank=2), range(6, 9))


class TestGather(unittest.TestCase):
    def test_merged_in_index_order(self):
        peers = {0: {0: "a", 1: "b"}, 2: {4: "e"}}
        comm = Communicator(MockComm(rank=1, size=3, peers=peers))
        merged = comm.gather_replicates({3: "d", 2: "c"})
        self.assertEqual(list(merged), [0, 1, 2, 3, 4])
        self.assertEqual("".join(merged.values()), "abcde")

    def test_single_rank_skips_collectives(self):
        mock = MockComm()
        comm = Communicator(mock)
        self.assertEqual(comm.gather_replicates({1: "y", 0: "x"}), {0: "x", 1: "y"})
        comm.barrier()
        self.assertEqual(mock.barriers, 0)

    def test_barrier_on_several_ranks(self):
        mock = MockComm(rank=1, size=2)
        Communicator(mock).barrier()
        self.assertEqual(mock.barriers, 1)


class TestSerialComm(unittest.TestCase):
    def test_single_rank_world(self):
        comm = Communicator(SerialComm())
        self.assertTrue(comm.is_root)
        self.assertEqual(comm.size, 1)
        self.assertEqual(comm.partition(5), range(5))
        self.assertEqual(comm.comm.allgather("x"), ["x"])


if __name__ == '__main__':
    unittest.main()
