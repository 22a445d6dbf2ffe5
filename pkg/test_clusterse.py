"""
Tests de errores estándar con respuestas dependientes
"""

import numpy as np
import pandas as pd
import pytest

from demlab.cli import io
from demlab.core.exceptions import DataIntegrityError, InputValidationError, NoRowsError
from demlab.schemas.clustering import BootstrapMode, ClusteredRecords
from demlab.services.clusterse_service import clusterse_service
from demlab.services.testkit_service import testkit_service


class TestDiagnostics:
    """
    Tests de potencia y cobertura con SE subestimado
    """

    @pytest.fixture(autouse=True)
    def setup(self):
        """Setup para cada test"""
        self.se = 0.05
        self.theta = testkit_service.mde(1.0, 1.0, 800, 800)

    def test_power_collapses_when_se_doubles(self):
        assert clusterse_service.power_under_se(self.theta, self.se) == pytest.approx(0.8, abs=1e-3)
        assert clusterse_service.power_under_se(self.theta, 2 * self.se) == pytest.approx(0.288, abs=2e-3)

    def test_t_power_approaches_normal(self):
        normal = clusterse_service.power_under_se(self.theta, 2 * self.se)
        assert clusterse_service.power_under_se(self.theta, 2 * self.se, dof=1e6) == pytest.approx(normal, abs=1e-4)
        assert clusterse_service.power_under_se(self.theta, 2 * self.se, dof=5) < normal

    def test_coverage_under_ratio(self):
        assert clusterse_service.coverage_under_se_ratio(2.0) == pytest.approx(0.673, abs=1e-3)
        assert clusterse_service.coverage_under_se_ratio(1.0) == pytest.approx(0.95)

    def test_design_effect(self):
        assert clusterse_service.design_effect(5, 0.3) == pytest.approx(2.2)
        assert clusterse_service.design_effect(1, 0.9) == pytest.approx(1.0)

    def test_invalid_diagnostics(self):
        with pytest.raises(InputValidationError):
            clusterse_service.coverage_under_se_ratio(0.5)
        with pytest.raises(InputValidationError):
            clusterse_service.power_under_se(0.1, 0.0)
        with pytest.raises(InputValidationError):
            clusterse_service.design_effect(3, 1.5)


class TestBootstrapSe:
    """
    Tests del bootstrap Poisson contra el SE analítico
    """

    @pytest.fixture(autouse=True)
    def setup(self):
        """Setup para cada test"""
        self.icc = 0.3
        self.records = clusterse_service.synthetic_clustered_records(
            users=400, mean_cluster_size=5, icc=self.icc, seed=7, products=30
        )

    def test_oneway_matches_analytic(self):
        report = clusterse_service.estimate(self.records, BootstrapMode.ONEWAY, b=600, seed=1)
        analytic = clusterse_service.analytic_clustered_se(self.records, self.icc)

        assert report.bootstrap_se == pytest.approx(analytic, rel=0.2)
        assert report.ratio > 1.2
        assert report.ci[0] <= report.bootstrap_se <= report.ci[1]
        assert report.b == 600

    def test_vanilla_underestimates(self):
        vanilla = clusterse_service.vanilla_se(self.records)
        analytic = clusterse_service.analytic_clustered_se(self.records, self.icc)
        assert vanilla.se < analytic

    def test_independent_rows_ratio_near_one(self):
        records = clusterse_service.synthetic_clustered_records(users=3000, mean_cluster_size=1, icc=0.0, seed=2)
        report = clusterse_service.estimate(records, b=600, seed=5)
        assert report.ratio == pytest.approx(1.0, abs=0.15)

    def test_result_independent_of_workers(self):
        one = clusterse_service.oneway_bootstrap_se(self.records, b=300, seed=9, workers=1)
        two = clusterse_service.oneway_bootstrap_se(self.records, b=300, seed=9, workers=2)
        assert one.se == two.se

    def test_twoway(self):
        report = clusterse_service.estimate(self.records, BootstrapMode.TWOWAY, b=300, seed=3)
        assert report.mode == BootstrapMode.TWOWAY
        assert report.bootstrap_se > 0

    def test_twoway_needs_products(self):
        records = clusterse_service.synthetic_clustered_records(users=50, mean_cluster_size=2, icc=0.1, seed=1)
        with pytest.raises(InputValidationError):
            clusterse_service.twoway_bootstrap_se(records, b=200)

    def test_minimum_resamples(self):
        with pytest.raises(InputValidationError):
            clusterse_service.oneway_bootstrap_se(self.records, b=50)

    def test_constant_values_are_degenerate(self):
        records = ClusteredRecords.from_arrays(["u1", "u1", "u2"], np.ones(3))
        estimate = clusterse_service.vanilla_se(records)
        assert estimate.degenerate
        assert estimate.se == 0.0


class TestStreamingTotals:
    """
    Tests de los estadísticos suficientes leídos por trozos
    """

    @pytest.fixture(autouse=True)
    def setup(self, tmp_path):
        """Setup para cada test"""
        self.records = clusterse_service.synthetic_clustered_records(
            users=150, mean_cluster_size=4, icc=0.3, seed=12, products=9
        )
        self.path = tmp_path / "transactions.csv"
        io.write_transactions_csv(self.path, self.records)

    def _streamed(self, chunksize: int):
        return clusterse_service.accumulate(lambda: io.iter_transaction_chunks(self.path, chunksize))

    def test_chunked_totals_match_in_memory(self):
        streamed = self._streamed(37)
        in_memory = clusterse_service.totals(self.records)
        values = self.records.frame["value"].to_numpy()

        assert streamed.n_rows == values.size
        assert streamed.mean == pytest.approx(values.mean(), rel=1e-12)
        assert streamed.m2 == pytest.approx(np.sum((values - values.mean()) ** 2), rel=1e-10)
        np.testing.assert_allclose(streamed.user_sums, in_memory.user_sums, rtol=1e-12)
        np.testing.assert_array_equal(streamed.user_counts, in_memory.user_counts)
        assert streamed.cell_counts.sum() == values.size

    def test_cell_totals_reproduce_row_weights(self, rng):
        totals = self._streamed(50)
        frame = self.records.frame
        user_codes, _ = pd.factorize(frame["user_id"])
        product_codes, _ = pd.factorize(frame["product_id"])
        w_user = rng.poisson(1.0, size=totals.n_users).astype(float)
        w_product = rng.poisson(1.0, size=totals.cell_sums.shape[1]).astype(float)

        row_weights = w_user[user_codes] * w_product[product_codes]
        assert w_user @ (totals.cell_sums @ w_product) == pytest.approx(row_weights @ frame["value"].to_numpy())
        assert w_user @ (totals.cell_counts @ w_product) == pytest.approx(row_weights.sum())

    def test_streamed_estimate_matches_in_memory(self):
        for mode in BootstrapMode:
            streamed = clusterse_service.estimate(self._streamed(64), mode, b=200, seed=4)
            in_memory = clusterse_service.estimate(self.records, mode, b=200, seed=4)
            assert streamed.bootstrap_se == pytest.approx(in_memory.bootstrap_se, rel=1e-9)
            assert streamed.vanilla_se == pytest.approx(in_memory.vanilla_se, rel=1e-9)

    def test_chunk_rows_keep_file_numbering(self, write_csv):
        rows = "".join(f"u{i},p1,{i}\n" for i in range(1, 5)) + "u5,p1,abc\n"
        path = write_csv("bad.csv", "user_id,product_id,value\n" + rows)
        with pytest.raises(DataIntegrityError) as exc:
            clusterse_service.accumulate(lambda: io.iter_transaction_chunks(path, 2))
        assert exc.value.row == 5

    def test_header_only_file(self, write_csv):
        path = write_csv("empty.csv", "user_id,product_id,value\n")
        with pytest.raises(NoRowsError):
            clusterse_service.accumulate(lambda: io.iter_transaction_chunks(path, 10))
        with pytest.raises(DataIntegrityError):
            list(io.iter_transaction_chunks(write_csv("bad_header.csv", "user,product,value\n")))

    def test_empty_product_disables_twoway(self, write_csv):
        path = write_csv("mixed.csv", "user_id,product_id,value\nu1,p1,1\nu1,,2\nu2,p2,3\n")
        totals = clusterse_service.accumulate(lambda: io.iter_transaction_chunks(path, 1))
        assert not totals.has_products
        assert totals.user_counts.tolist() == [2.0, 1.0]
