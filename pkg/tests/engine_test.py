import math
import unittest

from ha_sim.engine import RandomSource, SimEngine, Trace, TraceEntry, TraceKind
from ha_sim.errors import EngineFinishedError, ValidationError


class SimEngineTest(unittest.TestCase):
    def setUp(self):
        self.engine = SimEngine(seed=1)
        self.fired = []

    def note(self, label):
        return lambda: self.fired.append((label, self.engine.now))

    def test_time_ordering(self):
        self.engine.schedule(1.0, self.note("A"))
        self.engine.schedule(0.5, self.note("B"))
        self.engine.run_until()
        self.assertListEqual(self.fired, [("B", 0.5), ("A", 1.0)])

    def test_equal_times_fire_in_insertion_order(self):
        self.engine.schedule(2.0, self.note("A"))
        self.engine.schedule(2.0, self.note("B"))
        self.engine.run_until()
        self.assertListEqual([label for label, _ in self.fired], ["A", "B"])

    def test_zero_delay_runs_after_queued_actions_of_the_same_instant(self):
        def at_five():
            self.fired.append(("first", self.engine.now))
            self.engine.schedule(0, self.note("zero-delay"))

        self.engine.schedule(5, at_five)
        self.engine.schedule(5, self.note("second"))
        self.engine.run_until()
        self.assertListEqual([label for label, _ in self.fired], ["first", "second", "zero-delay"])
        self.assertTrue(all(time == 5 for _, time in self.fired))

    def test_negative_or_nan_delay_is_rejected(self):
        with self.assertRaises(ValidationError):
            self.engine.schedule(-0.1, self.note("A"))
        with self.assertRaises(ValidationError):
            self.engine.schedule(math.nan, self.note("A"))

    def test_cancel(self):
        action = self.engine.schedule(1.0, self.note("A"))
        self.assertTrue(self.engine.cancel(action))
        self.assertFalse(self.engine.cancel(action))
        self.engine.run_until()
        self.assertListEqual(self.fired, [])

        fired = self.engine.schedule(1.0, self.note("B"))
        self.engine.run_until()
        self.assertFalse(self.engine.cancel(fired))

    def test_quiescence_stops_when_the_queue_drains(self):
        self.engine.schedule(1.0, self.note("A"))
        self.engine.schedule(2.5, self.note("B"))
        self.engine.run_until()
        self.assertListEqual(self.fired, [("A", 1.0), ("B", 2.5)])
        self.assertEqual(self.engine.now, 2.5)

        self.engine.run_until()
        self.assertEqual(self.engine.now, 2.5)

    def test_run_until_empty_queue_moves_the_clock(self):
        trace = self.engine.run_until(10)
        self.assertEqual(len(trace), 0)
        self.assertEqual(self.engine.now, 10)

    def test_run_until_is_inclusive_and_resumable(self):
        self.engine.schedule(3.0, self.note("A"))
        self.engine.schedule(4.0, self.note("B"))
        self.engine.run_until(3.0)
        self.assertListEqual(self.fired, [("A", 3.0)])
        self.assertEqual(self.engine.now, 3.0)
        self.engine.run_until(3.5)
        self.assertEqual(self.engine.now, 3.5)
        self.engine.run_until()
        self.assertListEqual(self.fired, [("A", 3.0), ("B", 4.0)])

    def test_finish_stops_dispatch_and_scheduling(self):
        self.engine.schedule(1.0, self.engine.finish)
        self.engine.schedule(2.0, self.note("late"))
        self.engine.run_until()
        self.assertTrue(self.engine.finished)
        self.assertListEqual(self.fired, [])
        with self.assertRaises(EngineFinishedError):
            self.engine.schedule(1.0, self.note("A"))

    def test_record_stamps_now(self):
        self.engine.schedule(2.5, lambda: self.engine.record(TraceKind.POD_READY, pod="MS-0"))
        trace = self.engine.run_until()
        self.assertEqual(trace[0].time, 2.5)
        self.assertEqual(trace[0].get("pod"), "MS-0")


class TraceTest(unittest.TestCase):
    def setUp(self):
        self.trace = Trace([
            TraceEntry(1.0, TraceKind.POD_CREATED, {"pod": "MS-0"}),
            TraceEntry(2.0, TraceKind.POD_READY, {"pod": "MS-0"}),
            TraceEntry(2.0, TraceKind.POD_CREATED, {"pod": "MS-1"}),
            TraceEntry(3.0, TraceKind.POD_READY, {"pod": "MS-1"}),
        ])

    def test_filters(self):
        self.assertEqual(len(self.trace.of_kind(TraceKind.POD_READY)), 2)
        self.assertEqual(self.trace.of_kind(TraceKind.POD_READY, pod="MS-1")[0].time, 3.0)
        self.assertEqual(self.trace.first(TraceKind.POD_CREATED, start=1)[0], 2)
        self.assertIsNone(self.trace.first(TraceKind.POD_DELETED))

    def test_appending_into_the_past_fails(self):
        with self.assertRaises(AssertionError):
            self.trace.append(TraceEntry(0.5, TraceKind.POD_READY, {}))

    def test_json_lines_have_sorted_keys(self):
        line = Trace([TraceEntry(1.0, TraceKind.LABEL_CHANGED, {"value": "active", "key": "HAState", "pod": "MS-0"})]).to_lines()[0]
        self.assertEqual(line, '{"key": "HAState", "kind": "label changed", "pod": "MS-0", "t": 1.0, "value": "active"}')


class RandomSourceTest(unittest.TestCase):
    def test_same_seed_same_draws(self):
        first, second = RandomSource(42), RandomSource(42)
        self.assertListEqual([first.random() for _ in range(5)], [second.random() for _ in range(5)])
        self.assertEqual(first.suffix(), second.suffix())
        self.assertListEqual(first.sample(list("abcdef"), 3), second.sample(list("abcdef"), 3))

    def test_suffix_shape(self):
        suffix = RandomSource(3).suffix()
        self.assertEqual(len(suffix), 5)
        self.assertTrue(set(suffix) <= set(RandomSource.SUFFIX_ALPHABET))

    def test_sample_without_replacement(self):
        picked = RandomSource(5).sample(list(range(10)), 10)
        self.assertListEqual(sorted(picked), list(range(10)))


if __name__ == '__main__':
    unittest.main()
