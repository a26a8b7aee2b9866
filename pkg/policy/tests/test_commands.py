import json
import tempfile
from contextlib import redirect_stderr, redirect_stdout
from dataclasses import asdict
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.core.cache import cache
from django.core.management import call_command, execute_from_command_line
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from policy.models import DgpKind
from policy.utils.dgp import DgpSpec, generate

GOLDEN_DIR = Path(__file__).resolve().parent / "golden"

# enumerated values kept verbatim in the golden files; every other leaf is masked
LITERAL_KEYS = {"command", "dgp", "kind", "method", "reference", "target", "truth_method"}


def masked(value, key=None):
    """Replace leaf values by their JSON type so outputs compare on shape alone."""
    if key == "input_digests":
        return "<digests>"
    if isinstance(value, dict):
        return {name: masked(item, name) for name, item in value.items()}
    if isinstance(value, list):
        if value and all(isinstance(item, dict) for item in value):
            return [masked(item) for item in value]
        return "<array>"
    if isinstance(value, bool):
        return "<bool>"
    if value is None:
        return "<null>"
    if isinstance(value, (int, float)) or value in ("inf", "-inf"):
        return "<number>"
    return value if key in LITERAL_KEYS else "<string>"


class CommandTestCase(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def path(self, name):
        return self.dir / name

    def write_config(self, name, payload):
        path = self.path(name)
        path.write_text(json.dumps(payload))
        return path

    def run_command(self, *args, threads="1"):
        stdout, stderr = StringIO(), StringIO()
        call_command(*args, "--threads", threads, stdout=stdout, stderr=stderr)
        return stdout.getvalue(), stderr.getvalue()

    def exit_code(self, *argv):
        """Exit status of ``manage.py <argv>`` as seen from the shell."""
        with redirect_stdout(StringIO()), redirect_stderr(StringIO()):
            try:
                execute_from_command_line(["manage.py", *argv])
            except SystemExit as exc:
                return exc.code
        return 0

    def assertMatchesGolden(self, path, name):
        expected = json.loads((GOLDEN_DIR / name).read_text())
        self.assertEqual(masked(json.loads(Path(path).read_text())), expected)


class EstimateCommandTests(CommandTestCase):

    def setUp(self):
        super().setUp()
        ds = generate(DgpSpec(kind=DgpKind.PARAMETRIC), 4000, np.random.default_rng(21))
        self.data = self.path("obs.csv")
        self.schema = asdict(ds.save(self.data))
        self.learners = {"default": {"kind": "logistic", "basis": "main"}}

    def config(self, **problem):
        payload = {"kappa": 0.35, "alpha": 1, "y_bounds": [0, 1], "c_bounds": [0, 1], "folds": 2, **problem}
        return self.write_config("run.json", {"schema": self.schema, "problem": payload, "learners": self.learners})

    def test_writes_estimates_and_manifest(self):
        out = self.path("result.json")
        stdout, _ = self.run_command("estimate", "--data", str(self.data), "--config", str(self.config()), "--out", str(out))
        result = json.loads(out.read_text())
        self.assertEqual([e["reference"] for e in result["estimates"]], ["FR", "RD", "TP"])
        self.assertEqual(result["manifest"]["command"], "estimate")
        self.assertEqual(set(result["manifest"]["input_digests"]), {str(self.data), str(self.config())})
        self.assertNotIn("wall_clock_seconds", result["manifest"])
        self.assertIn("Results written to", stdout)

    def test_infeasible_budget_exits_with_two(self):
        out = self.path("infeasible.json")
        with self.assertRaises(CommandError) as ctx:
            self.run_command("estimate", "--data", str(self.data), "--config", str(self.config(kappa=0.05)), "--out", str(out))
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertIn("infeasible budget", str(ctx.exception))
        report = json.loads(out.read_text())
        self.assertFalse(report["validation"]["feasible"])

    def test_bad_treatment_exits_with_one(self):
        self.path("bad.csv").write_text("w,t,c,y\n0.1,1,0.5,1\n0.2,2,0.5,0\n")
        with self.assertRaises(CommandError) as ctx:
            self.run_command("estimate", "--data", str(self.path("bad.csv")), "--config", str(self.config()),
                             "--out", str(self.path("never.json")))
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("row 2", str(ctx.exception))

    def test_output_matches_golden(self):
        out = self.path("result.json")
        self.run_command("estimate", "--data", str(self.data), "--config", str(self.config()), "--out", str(out))
        self.assertMatchesGolden(out, "estimate.json")

    def test_infeasible_output_matches_golden(self):
        out = self.path("infeasible.json")
        with self.assertRaises(CommandError):
            self.run_command("estimate", "--data", str(self.data), "--config", str(self.config(kappa=0.05)), "--out", str(out))
        self.assertMatchesGolden(out, "estimate_infeasible.json")

    def test_exit_codes(self):
        self.path("bad.csv").write_text("w,t,c,y\n0.1,1,0.5,1\n0.2,2,0.5,0\n")
        common = ["--threads", "1", "--out", str(self.path("status.json"))]
        self.assertEqual(self.exit_code("estimate", "--data", str(self.data), "--config", str(self.config()), *common), 0)
        self.assertEqual(self.exit_code("estimate", "--data", str(self.path("bad.csv")), "--config", str(self.config()), *common), 1)
        self.assertEqual(self.exit_code("estimate", "--data", str(self.data), "--config", str(self.config(kappa=0.05)), *common), 2)

    def test_unwritable_output_is_an_io_error(self):
        out = self.path("missing") / "result.json"
        with self.assertRaises(CommandError) as ctx:
            self.run_command("estimate", "--data", str(self.data), "--config", str(self.config()), "--out", str(out))
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("I/O error", str(ctx.exception))

    def test_schema_is_required(self):
        config = self.write_config("noschema.json", {"problem": {"kappa": 0.35}})
        with self.assertRaises(CommandError) as ctx:
            self.run_command("estimate", "--data", str(self.data), "--config", str(config), "--out", str(self.path("x.json")))
        self.assertIn("schema", str(ctx.exception))


class TruthCommandTests(CommandTestCase):

    def test_few_samples_warn_but_still_write(self):
        config = self.write_config("truth.json", {"problem": {"kappa": "inf"}})
        out = self.path("truth_out.json")
        with self.assertLogs("policy", level="WARNING"):
            stdout, stderr = StringIO(), StringIO()
            call_command("truth", "--dgp", "parametric", "--config", str(config), "--samples", "1",
                         "--seed", "4", "--out", str(out), stdout=stdout, stderr=stderr)
        self.assertIn("recommended", stderr.getvalue())
        truth = json.loads(out.read_text())
        self.assertEqual(truth["samples"], 1)
        self.assertEqual(set(truth["psi0"]), {"FR", "RD", "TP"})
        self.assertEqual(truth["rd0"], 1.0)

    def test_output_matches_golden(self):
        out = self.path("truth_out.json")
        call_command("truth", "--dgp", "parametric", "--method", "quadrature", "--seed", "4", "--out", str(out),
                     stdout=StringIO(), stderr=StringIO())
        self.assertMatchesGolden(out, "truth.json")

    def test_samples_must_be_positive(self):
        with self.assertRaises(CommandError):
            call_command("truth", "--dgp", "parametric", "--samples", "0", "--out", str(self.path("t.json")),
                         stdout=StringIO(), stderr=StringIO())


class SimulateCommandTests(CommandTestCase):

    def setUp(self):
        super().setUp()
        cache.clear()
        self.addCleanup(cache.clear)
        self.config = self.write_config("sim.json", {"problem": {"folds": 2}})

    def simulate(self, out, replications, *extra, threads="1"):
        return self.run_command(
            "simulate", "--dgp", "parametric", "--oracle", "--n", "200", "300", "--reps", "2", "--seed", "7",
            "--truth-method", "quadrature", "--config", str(self.config),
            "--out", str(out), "--replications", str(replications), *extra,
            threads=threads,
        )

    def test_reruns_are_byte_identical(self):
        first, second = self.path("a.json"), self.path("b.json")
        stdout, _ = self.simulate(first, self.path("a.csv"))
        self.simulate(second, self.path("b.csv"))
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertEqual(self.path("a.csv").read_bytes(), self.path("b.csv").read_bytes())
        self.assertIn("cov95", stdout)

        report = json.loads(first.read_text())
        self.assertEqual([r["n"] for r in report["reports"]], [200, 300])
        frame = pd.read_csv(self.path("a.csv"))
        self.assertEqual(len(frame), 2 * 2 * 3)
        self.assertEqual(sorted(frame["n"].unique().tolist()), [200, 300])

    def test_output_matches_golden(self):
        out = self.path("report.json")
        self.simulate(out, self.path("reps.csv"))
        self.assertMatchesGolden(out, "simulate.json")

    def test_worker_count_does_not_change_output(self):
        serial, pooled = self.path("serial.json"), self.path("pooled.json")
        self.simulate(serial, self.path("serial.csv"), threads="1")
        self.simulate(pooled, self.path("pooled.csv"), threads="2")
        self.assertEqual(serial.read_bytes(), pooled.read_bytes())
        self.assertEqual(self.path("serial.csv").read_bytes(), self.path("pooled.csv").read_bytes())

    def test_zero_replications(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command("simulate", "--dgp", "parametric", "--n", "100", "--reps", "0", "--out", str(self.path("r.json")))
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn("reps must be", str(ctx.exception))

    def test_oracle_excludes_learner_overrides(self):
        config = self.write_config("learners.json", {"learners": {"default": {"kind": "linear"}}})
        with self.assertRaises(CommandError):
            self.run_command("simulate", "--dgp", "parametric", "--oracle", "--n", "100", "--reps", "1",
                             "--config", str(config), "--out", str(self.path("r.json")))

    def test_threads_must_be_valid(self):
        with self.assertRaises(CommandError):
            call_command("simulate", "--dgp", "parametric", "--n", "100", "--reps", "1", "--threads", "0",
                         "--out", str(self.path("r.json")), stdout=StringIO(), stderr=StringIO())
