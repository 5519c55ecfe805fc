"""End-to-end checks of the phasebif executable.

Usage: test_cli.py <phasebif binary> <schemas dir>
"""

import json
import os
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

import jsonschema

BINARY = ""
SCHEMAS = Path()

SMALL_AC = ["--model", "ac", "--n-cells", "100", "--eps-range", "0.2:0.7"]
SMALL_ACOK = ["--model", "acok", "--n-cells", "60", "--gamma-range", "0:700"]


def run(*args, env=None):
    full_env = dict(os.environ)
    full_env.pop("PHASE_BIFURCATE_THREADS", None)
    if env:
        full_env.update(env)
    return subprocess.run([BINARY, *args], capture_output=True, text=True, env=full_env, timeout=600)


def schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


class ExitCodes(unittest.TestCase):
    def test_missing_subcommand_is_usage_error(self):
        self.assertEqual(run().returncode, 1)

    def test_unknown_flag_is_usage_error(self):
        self.assertEqual(run("trace", "--bogus").returncode, 1)

    def test_bad_model_is_usage_error(self):
        self.assertEqual(run("trace", "--model", "xyz").returncode, 1)

    def test_odd_grid_is_usage_error(self):
        r = run("trace", "--n-cells", "201")
        self.assertEqual(r.returncode, 1)
        self.assertIn("even", r.stderr)

    def test_help_succeeds(self):
        r = run("--help")
        self.assertEqual(r.returncode, 0)
        self.assertIn("verify", r.stdout)

    def test_bad_thread_env_is_usage_error(self):
        self.assertEqual(run("points", *SMALL_AC, env={"PHASE_BIFURCATE_THREADS": "many"}).returncode, 1)

    def test_unwritable_output_fails(self):
        r = run("points", *SMALL_AC, "--out", "/nonexistent-dir/out.csv")
        self.assertNotEqual(r.returncode, 0)
        self.assertIn("cannot open", r.stderr)

    def test_default_verify_passes(self):
        r = run("verify")
        self.assertEqual(r.returncode, 0, r.stderr)
        doc = json.loads(r.stdout)
        self.assertTrue(doc["passed"])

    def test_broken_ghost_closure_fails_verification(self):
        r = run("verify", "--ghost-closure", "copy")
        self.assertEqual(r.returncode, 3)
        checks = {c["name"]: c for c in json.loads(r.stdout)["checks"]}
        self.assertTrue(checks["jacobian_fd"]["passed"])
        self.assertFalse(checks["bifurcation_gap"]["passed"])
        self.assertGreater(checks["bifurcation_gap"]["measured"], 1e-3)


class Outputs(unittest.TestCase):
    def test_ch_at_zero_mu_matches_ac_byte_for_byte(self):
        ac = run("trace", *SMALL_AC)
        ch = run("trace", "--model", "ch", "--mu0", "0", "--n-cells", "100", "--eps-range", "0.2:0.7")
        self.assertEqual(ac.returncode, 0)
        self.assertEqual(ch.returncode, 0)
        self.assertEqual(ac.stdout, ch.stdout)

    def test_thread_count_does_not_change_output(self):
        one = run("trace", *SMALL_AC, env={"PHASE_BIFURCATE_THREADS": "1"})
        four = run("trace", *SMALL_AC, env={"PHASE_BIFURCATE_THREADS": "4"})
        self.assertEqual(one.stdout, four.stdout)

    def test_diagram_csv_round_trips(self):
        r = run("trace", *SMALL_AC)
        lines = r.stdout.splitlines()
        self.assertEqual(lines[0], "branch_id,param,phi_at_minus1,sup_norm,det_sign")
        for line in lines[1:]:
            fields = line.split(",")
            self.assertEqual(len(fields), 5)
            for f in fields[1:4]:
                v = float(f)
                self.assertEqual(f"{v:.17g}", f)

    def test_points_on_outer_state_is_empty(self):
        r = run("points", "--model", "ac", "--phi0", "1")
        self.assertEqual(r.returncode, 0)
        self.assertEqual(r.stdout.splitlines(), ["family,n,analytic_value,detected_value,relative_gap"])
        self.assertIn("no bifurcations on this branch", r.stderr)

    def test_acok_points_include_cosine_one(self):
        r = run("points", "--model", "acok", "--epsilon", "0.3", "--gamma-range", "0:2000", "--format", "json")
        self.assertEqual(r.returncode, 0, r.stderr)
        rows = json.loads(r.stdout)["points"]
        match = [p for p in rows if p["family"] == "cosine" and p["n"] == 1]
        self.assertEqual(len(match), 1)
        self.assertAlmostEqual(match[0]["analytic_value"], 563.0, delta=0.1)
        self.assertLessEqual(match[0]["relative_gap"], 5e-3)

    def test_out_file(self):
        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "diagram.json"
            r = run("trace", *SMALL_AC, "--format", "json", "--out", str(path))
            self.assertEqual(r.returncode, 0)
            self.assertEqual(r.stdout, "")
            doc = json.loads(path.read_text())
            self.assertEqual(doc["config"]["out"], str(path))


class Schemas(unittest.TestCase):
    def check(self, name, *args):
        r = run(*args, "--format", "json")
        self.assertEqual(r.returncode, 0, r.stderr)
        doc = json.loads(r.stdout)
        jsonschema.validate(doc, schema(name))
        return doc

    def test_schemas_are_valid(self):
        for name in ("diagram", "points", "solutions", "verify"):
            jsonschema.Draft202012Validator.check_schema(schema(name))

    def test_trace_ac(self):
        doc = self.check("diagram", "trace", *SMALL_AC)
        self.assertEqual(len(doc["bifurcations"]), 3)

    def test_trace_acok_arclength(self):
        doc = self.check("diagram", "trace", *SMALL_ACOK, "--arclength")
        self.assertTrue(doc["config"]["settings"]["use_pseudo_arclength"])
        for b in doc["branches"]:
            for p in b["points"]:
                self.assertLessEqual(p["sup_norm"], 1.5)

    def test_points(self):
        self.check("points", "points", *SMALL_AC)

    def test_points_ch(self):
        self.check("points", "points", "--model", "ch", "--mu0", "0.05", "--n-cells", "100", "--eps-range", "0.2:0.7")

    def test_solutions(self):
        doc = self.check("solutions", "solutions", *SMALL_AC, "--epsilon", "0.25")
        self.assertEqual(doc["count"], len(doc["solutions"]))
        self.assertEqual(doc["count"], 4)

    def test_verify(self):
        self.check("verify", "verify", "--n-cells", "100")

    def test_verify_acok(self):
        self.check("verify", "verify", "--model", "acok", "--n-cells", "100", "--gamma-range", "0:700")

    def test_schema_rejects_tampered_output(self):
        r = run("points", *SMALL_AC, "--format", "json")
        doc = json.loads(r.stdout)
        doc["config"]["n_cells"] = 7
        with self.assertRaises(jsonschema.ValidationError):
            jsonschema.validate(doc, schema("points"))


if __name__ == "__main__":
    BINARY = sys.argv[1]
    SCHEMAS = Path(sys.argv[2])
    unittest.main(argv=[sys.argv[0]], verbosity=2)
