import io
import logging
import unittest

from src import keyvalue
from src.errors import KeyValueParseError
from src.logger import configure_logging


class TestParse(unittest.TestCase):
    def test_comments_sections_and_spacing(self):
        entries = keyvalue.parse("# header\n[scenario]\n\n n0 = 200 \nname=ph\n")
        self.assertEqual(entries.keys(), ["n0", "name"])
        self.assertEqual(entries.get_int("n0"), 200)
        self.assertEqual(entries.get_str("name"), "ph")
        self.assertEqual(entries.line("name"), 5)

    def test_typed_getters(self):
        entries = keyvalue.parse("a = 0.5,1\nb = yes\nc =\nd = inf\n")
        self.assertEqual(entries.get_floats("a"), (0.5, 1.0))
        self.assertTrue(entries.get_bool("b"))
        self.assertEqual(entries.get_float("c", 3.0), 3.0)
        self.assertEqual(entries.get_float("d"), float("inf"))
        self.assertIsNone(entries.get_str("missing"))

    def test_errors_carry_line(self):
        cases = {
            "a = 1\na = 2\n": ":2",
            "a = 1\nnonsense\n": ":2",
            "= 3\n": ":1",
        }
        for text, where in cases.items():
            with self.assertRaises(KeyValueParseError) as ctx:
                keyvalue.parse(text, "f.txt")
            self.assertIn("f.txt" + where, str(ctx.exception))

        entries = keyvalue.parse("x = 1\ny = two\n", "f.txt")
        with self.assertRaises(KeyValueParseError) as ctx:
            entries.get_int("y")
        self.assertEqual(ctx.exception.line, 2)
        with self.assertRaises(KeyValueParseError):
            entries.reject_unknown({"x"})
        with self.assertRaises(KeyValueParseError):
            entries.raw("z", required=True)

    def test_dump_formats(self):
        text = keyvalue.dump([("c", float("inf")), ("f", (0.5, 1.0)), ("b", True), ("n", None)],
                             header="design")
        self.assertEqual(text, "# design\nc = inf\nf = 0.5,1.0\nb = true\nn = \n")
        entries = keyvalue.parse(text)
        self.assertEqual(entries.get_float("c"), float("inf"))
        self.assertEqual(entries.get_floats("f"), (0.5, 1.0))


class TestLogging(unittest.TestCase):
    def tearDown(self):
        logging.captureWarnings(False)

    def test_rank_levels_and_prefix(self):
        stream = io.StringIO()
        root = configure_logging(0, rank=0, stream=stream)
        self.assertEqual(root.level, logging.INFO)
        logging.getLogger("src.test").info("hello")
        self.assertIn("[rank 0] INFO src.test: hello", stream.getvalue())

        self.assertEqual(configure_logging(0, rank=3, stream=stream).level, logging.WARNING)
        self.assertEqual(configure_logging(2, rank=3, stream=stream).level, logging.DEBUG)
        self.assertEqual(len(logging.getLogger().handlers), 1)


if __name__ == '__main__':
    unittest.main()
