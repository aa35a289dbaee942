import math
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory

from ha_sim.errors import ReportError
from ha_sim.report import (
    CSV_COLUMNS,
    CURVES_FILE,
    EventRow,
    emit_report,
    percent_change,
    read_rows,
    render_csv,
    render_curves,
    render_table,
)


def failure(scenario, trial, with_sc, recovery, outage, event_id="fault-1:MS-0", architecture="stateful_ordered"):
    return EventRow(
        scenario=scenario, trial=trial, architecture=architecture, with_sc=with_sc,
        event_id=event_id, event_kind="container_failure",
        reaction_s=outage - recovery, repair_s=1.0, recovery_s=recovery, outage_s=outage,
    )


ROWS = [
    failure("rq1_stateful_no_sc", 0, False, 1.480, 2.159),
    failure("rq1_stateful_no_sc", 1, False, 1.480, 2.159),
    failure("rq1_stateful_sc", 0, True, 0.793, 1.512),
    EventRow("rq3_scale_out_stateful_sc-k4", 0, "stateful_ordered", True, "scale-1", "scale_out", scaling_s=4.234, ha_assign_s=5.653),
]


class ReportTest(unittest.TestCase):
    def test_csv_header_and_empty_cells(self):
        lines = render_csv(ROWS).splitlines()
        self.assertEqual(lines[0], ",".join(CSV_COLUMNS))
        self.assertEqual(lines[1], "rq1_stateful_no_sc,0,stateful_ordered,false,fault-1:MS-0,container_failure,0.679,1.000,1.480,2.159,,,false,false")
        self.assertTrue(lines[4].endswith(",,,,4.234,5.653,false,false"))

    def test_results_read_back(self):
        with TemporaryDirectory() as folder:
            emit_report(ROWS, folder, "csv")
            rows = read_rows(folder)
        self.assertEqual(len(rows), 4)
        self.assertEqual(rows[2].recovery_s, 0.793)
        self.assertTrue(rows[2].with_sc)
        self.assertIsNone(rows[3].outage_s)

    def test_infinite_outage_survives_the_csv(self):
        row = failure("node_shutdown_stateful_no_sc", 0, False, math.inf, math.inf)
        with TemporaryDirectory() as folder:
            emit_report([row], folder, "csv")
            [read] = read_rows(Path(folder))
        self.assertTrue(math.isinf(read.outage_s))

    def test_bad_result_files(self):
        with TemporaryDirectory() as folder:
            with self.assertRaises(ReportError):
                read_rows(folder)
            Path(folder, "results.csv").write_text("a,b\n1,2\n", encoding="utf-8")
            with self.assertRaises(ReportError):
                read_rows(folder)
            Path(folder, "results.csv").write_text(",".join(CSV_COLUMNS) + "\n" + "x," * 13 + "x\n", encoding="utf-8")
            with self.assertRaises(ReportError):
                read_rows(folder)

    def test_table(self):
        table = render_table(ROWS)
        self.assertIn("Availability (seconds, mean ±stddev)", table)
        self.assertIn("1.480 ±0.000", table)
        self.assertIn("Scaling (seconds, mean ±stddev)", table)
        self.assertIn("stateful_ordered container_failure recovery: -46.4%", table)
        self.assertEqual(render_table([]), "No measured events\n")

    def test_percent_change(self):
        self.assertAlmostEqual(percent_change(1.534, 0.688), -55.15, places=2)
        self.assertTrue(math.isnan(percent_change(0, 1)))
        self.assertTrue(math.isnan(percent_change(1, math.inf)))

    def test_curves_rank_by_detection(self):
        rows = [
            failure("rq4_stateful_sc-k2", 0, True, 0.793, 1.512, event_id="fault-1:MS-0"),
            failure("rq4_stateful_sc-k2", 0, True, 0.823, 1.542, event_id="fault-2:MS-2"),
        ]
        lines = render_curves(rows).splitlines()
        self.assertEqual(lines[0], "scenario,k,trial,rank,outage_s")
        self.assertEqual(lines[1:], ["rq4_stateful_sc-k2,2,0,1,1.512", "rq4_stateful_sc-k2,2,0,2,1.542"])

    def test_emit_report(self):
        with TemporaryDirectory() as folder:
            path = emit_report(ROWS, Path(folder) / "nested", "curves")
            self.assertEqual(path.name, CURVES_FILE)
            self.assertTrue(path.exists())
            with self.assertRaises(ReportError):
                emit_report(ROWS, folder, "pdf")


if __name__ == '__main__':
    unittest.main()
