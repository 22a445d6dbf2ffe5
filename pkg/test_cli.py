"""
Tests del CLI y de la lectura de archivos
"""

import orjson
import pytest

from demlab.cli import io
from demlab.cli.expcli import main
from demlab.core.exceptions import DataIntegrityError, InputValidationError, NoRowsError
from demlab.services.clusterse_service import clusterse_service

SCENARIO = """n0=1000
n1=1000
n2=1000
n3=1000
mu_C0=0
mu_C1=0
mu_C2=0
mu_C3=0
mu_I1=0.1
mu_I2=0.3
mu_Iphi=0.1
mu_Ipsi=0.3
var_C0=1
var_C1=1
var_C2=1
var_C3=1
var_I1=1
var_I2=1
var_Iphi=1
var_Ipsi=1
"""

CHECKPOINT_HEADER = "experiment_id,variant_id,metric_id,time_index,count_c,mean_c,variance_c\n"

EFFECT_CHECKPOINTS = CHECKPOINT_HEADER + """e1,control,revenue,1,100,0.0,1.0
e1,control,revenue,2,400,0.0,1.0
e1,treatment,revenue,1,100,0.6,1.0
e1,treatment,revenue,2,400,0.6,1.0
"""

NULL_CHECKPOINTS = CHECKPOINT_HEADER + """e2,a,revenue,1,100,0.0,1.0
e2,a,revenue,2,400,0.0,1.0
e2,b,revenue,1,100,0.0,1.0
e2,b,revenue,2,400,0.0,1.0
"""


def run(capsys, *argv):
    """Ejecutar el CLI y devolver (código, JSON de stdout)"""
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, orjson.loads(out) if out.strip() else None


class TestDesignCommands:
    """
    Tests de los subcomandos de diseño y SRM
    """

    @pytest.fixture(autouse=True)
    def setup(self, capsys):
        """Setup para cada test"""
        self.capsys = capsys

    def test_mde(self):
        code, payload = run(self.capsys, "mde", "--var-a", "1", "--var-b", "1", "--n", "1000", "--m", "1000")
        assert code == 0
        assert payload["schema"] == 1
        assert payload["status"] == "success"
        assert payload["command"] == "mde"
        assert payload["result"]["mde"] == pytest.approx(0.1253, abs=1e-4)

    def test_samplesize(self):
        code, payload = run(self.capsys, "samplesize", "--theta", "0.1", "--var-a", "1", "--var-b", "1")
        assert code == 0
        assert payload["result"]["multiplier"] == pytest.approx(15.698, rel=5e-3)
        assert payload["result"]["rule_of_thumb"] == 1600

    def test_srm_balanced(self):
        code, payload = run(self.capsys, "srm", "--counts", "1000,1000", "--ratios", "1,1")
        assert code == 0
        assert payload["result"]["statistic"] == pytest.approx(0.0)
        assert payload["result"]["p_value"] == pytest.approx(1.0)
        assert payload["result"]["details"]["srm"] is False

    def test_srm_csv_format(self):
        code = main(["srm", "--counts", "1000,1100", "--ratios", "1,1", "--format", "csv"])
        out = self.capsys.readouterr().out
        header = out.splitlines()[0].split(",")
        assert code == 0
        assert "statistic" in header
        assert "details.srm" in header

    def test_rulu_value(self):
        code, payload = run(
            self.capsys, "rulu-value", "--sigma-v", "1", "--sigma1", "0.5", "--sigma2", "0.4",
            "--mu-v", "0", "--n", "100", "--m", "10"
        )
        assert code == 0
        assert payload["result"]["relative_gain"] == pytest.approx(0.038, abs=1e-3)

    def test_invalid_rulu_params(self):
        code, payload = run(
            self.capsys, "rulu-value", "--sigma-v", "1", "--sigma1", "0.5", "--sigma2", "0.4",
            "--n", "10", "--m", "20"
        )
        assert code == 2
        assert payload["status"] == "error"


class TestUsageErrors:
    """
    Tests de códigos de salida ante errores de uso
    """

    @pytest.fixture(autouse=True)
    def setup(self, capsys):
        """Setup para cada test"""
        self.capsys = capsys

    def test_unknown_flag(self):
        code, payload = run(self.capsys, "mde", "--bogus")
        assert code == 2
        assert payload is None

    def test_missing_command(self):
        code, _ = run(self.capsys)
        assert code == 2

    def test_version(self):
        code = main(["--version"])
        assert code == 0
        assert self.capsys.readouterr().out.startswith("demlab ")


class TestFileCommands:
    """
    Tests de los subcomandos que leen archivos
    """

    @pytest.fixture(autouse=True)
    def setup(self, capsys, write_csv):
        """Setup para cada test"""
        self.capsys = capsys
        self.write_csv = write_csv
        self.scenario = write_csv("scenario.env", SCENARIO)

    def test_bad_row_reports_row_number(self):
        path = self.write_csv("responses.csv", "unit_id,group,value\nu1,A,1.0\nu2,B,2.0\nu3,A,abc\n")
        code, payload = run(self.capsys, "test", "--input", str(path))
        assert code == 2
        assert payload["error_code"] == "data_integrity"
        assert payload["details"]["row"] == 3

    def test_no_rows(self):
        path = self.write_csv("responses.csv", "unit_id,group,value\n")
        code, payload = run(self.capsys, "test", "--input", str(path))
        assert code == 2
        assert payload["error_code"] == "no_rows"

    def test_default_test_is_practical(self):
        rows = "".join(f"u{i},{'A' if i % 2 else 'B'},{i % 7}\n" for i in range(40))
        path = self.write_csv("responses.csv", "unit_id,group,value\n" + rows)
        code, payload = run(self.capsys, "test", "--input", str(path))
        assert code == 0
        assert payload["result"]["test"] == "practical_t"
        assert payload["result"]["dof"] is None

    def test_welch_from_csv(self):
        rows = "".join(f"u{i},{'A' if i % 2 else 'B'},{i % 7}\n" for i in range(40))
        path = self.write_csv("responses.csv", "unit_id,group,value\n" + rows)
        code, payload = run(self.capsys, "test", "--input", str(path), "--test", "welch")
        assert code == 0
        assert payload["result"]["test"] == "welch_t"

    def test_degenerate_samples_exit_three(self):
        rows = "u1,A,1\nu2,A,1\nu3,B,1\nu4,B,1\n"
        path = self.write_csv("responses.csv", "unit_id,group,value\n" + rows)
        code, payload = run(self.capsys, "test", "--input", str(path))
        assert code == 3
        assert payload["error_code"] == "degenerate_samples"

    def test_pse_eval_single_setup(self):
        code, payload = run(self.capsys, "pse-eval", "--scenario", str(self.scenario), "--setup", "3")
        assert code == 0
        assert payload["result"]["actual_effect"] == pytest.approx(0.4 / 3)

    def test_pse_eval_table(self):
        code = main(["pse-eval", "--scenario", str(self.scenario), "--format", "table"])
        lines = self.capsys.readouterr().out.splitlines()
        assert code == 0
        assert "setup_id" in lines[0]
        assert len(lines) == 5

    def test_pse_compare(self):
        code, payload = run(self.capsys, "pse-compare", "--scenario", str(self.scenario), "--a", "3", "--b", "2")
        assert code == 0
        assert payload["result"]["verdict"] == "a_superior"

    def test_pse_advise_without_group_zero(self):
        path = self.write_csv("no_dilution.env", SCENARIO.replace("n0=1000", "n0=0"))
        code, payload = run(self.capsys, "pse-advise", "--scenario", str(path))
        assert code == 0
        assert payload["result"]["dilution"] is None
        assert payload["result"]["dual_control"]["verdict"] == "s3_superior"

    def test_unknown_scenario_key(self):
        path = self.write_csv("bad.env", SCENARIO + "gamma=1\n")
        code, payload = run(self.capsys, "pse-eval", "--scenario", str(path))
        assert code == 2
        assert payload["details"]["keys"] == ["gamma"]

    def test_msprt_replay(self):
        path = self.write_csv("checkpoints.csv", EFFECT_CHECKPOINTS)
        code, payload = run(self.capsys, "msprt-replay", "--input", str(path), "--tau2", "1")
        assert code == 0
        assert payload["result"][0]["reject"] is True
        assert payload["result"][0]["stop_index"] == 1

    def test_confusion(self, tmp_path):
        (tmp_path / "effect.csv").write_text(EFFECT_CHECKPOINTS, encoding="utf-8")
        (tmp_path / "null.csv").write_text(NULL_CHECKPOINTS, encoding="utf-8")
        code, payload = run(self.capsys, "confusion", "--dir", str(tmp_path), "--tau2", "1")
        assert code == 0
        assert payload["result"]["both_reject"] == 1
        assert payload["result"]["neither"] == 1

    def test_bootstrap_se(self, tmp_path):
        records = clusterse_service.synthetic_clustered_records(users=200, mean_cluster_size=3, icc=0.4, seed=8)
        path = tmp_path / "transactions.csv"
        io.write_transactions_csv(path, records)
        code, payload = run(
            self.capsys, "bootstrap-se", "--input", str(path), "--b", "200", "--seed", "1", "--chunksize", "50"
        )
        assert code == 0
        assert payload["result"]["ratio"] > 1.0
        assert payload["result"]["b"] == 200


class TestReaders:
    """
    Tests de validación de los lectores de CSV
    """

    @pytest.fixture(autouse=True)
    def setup(self, write_csv):
        """Setup para cada test"""
        self.write_csv = write_csv

    def test_decreasing_count(self):
        path = self.write_csv("c.csv", CHECKPOINT_HEADER + "e,control,m,1,100,0,1\ne,control,m,2,50,0,1\n")
        with pytest.raises(DataIntegrityError) as exc:
            io.read_checkpoint_csv(path)
        assert exc.value.row == 2

    def test_duplicate_time_index(self):
        path = self.write_csv("c.csv", CHECKPOINT_HEADER + "e,control,m,1,100,0,1\ne,control,m,1,200,0,1\n")
        with pytest.raises(DataIntegrityError):
            io.read_checkpoint_csv(path)

    def test_header_mismatch(self):
        path = self.write_csv("c.csv", "user,product,value\nu1,p1,1\n")
        with pytest.raises(DataIntegrityError) as exc:
            io.read_transactions_csv(path)
        assert exc.value.row == 0

    def test_empty_file(self):
        path = self.write_csv("c.csv", "")
        with pytest.raises(NoRowsError):
            io.read_transactions_csv(path)

    def test_three_variants_rejected(self):
        rows = "e,a,m,1,10,0,1\ne,b,m,1,10,0,1\ne,c,m,1,10,0,1\n"
        path = self.write_csv("c.csv", CHECKPOINT_HEADER + rows)
        with pytest.raises(InputValidationError):
            io.pair_experiments(io.read_checkpoint_csv(path))

    def test_checkpoint_round_trip(self, tmp_path):
        path = self.write_csv("c.csv", EFFECT_CHECKPOINTS)
        series = io.read_checkpoint_csv(path)
        copy = tmp_path / "copy.csv"
        io.write_checkpoint_csv(copy, series)
        assert io.read_checkpoint_csv(copy) == series

    def test_responses_round_trip(self, tmp_path):
        path = self.write_csv("r.csv", "unit_id,group,value\nu1,A,0.1\nu2,B,2.5\nu3,A,-1\n")
        table = io.read_responses_csv(path)
        copy = tmp_path / "copy.csv"
        io.write_responses_csv(copy, table)

        again = io.read_responses_csv(copy)
        assert again.groups == ["A", "B"]
        assert again.values("A").tolist() == [0.1, -1.0]
