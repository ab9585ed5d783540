import numpy as np
import pytest

from vmbeauty.bench import (BenchError, attention_reference, bench_scan, fit_exponent, format_bench,
                            write_bench_csv)


class TestBench:
    def test_structure(self, tmp_path):
        res = bench_scan([16, 32, 64], trials=1, batch=1, inner=4, d_state=2, attn_batch=1, attn_dim=8)
        assert len(res.rows) == 3 * 2
        assert {r.kernel for r in res.rows} == {"selective_scan", "attention"}
        assert set(res.exponents) == {"selective_scan", "attention"}
        write_bench_csv(tmp_path / "b.csv", res)
        assert len((tmp_path / "b.csv").read_text().splitlines()) == 7
        assert "fitted exponents" in format_bench(res)

    @pytest.mark.parametrize("lengths", [[8], [8, 16], [8, 8, 16]])
    def test_needs_three_lengths(self, lengths):
        with pytest.raises(BenchError, match="at least 3"):
            bench_scan(lengths, trials=1)

    def test_fit_exponent(self):
        n = np.array([10, 20, 40, 80])
        assert fit_exponent(n, 3e-6 * n ** 2) == pytest.approx(2.0)
        assert fit_exponent(n, 5e-4 * n) == pytest.approx(1.0)

    def test_attention_reference(self, rng):
        q, k, v = rng.normal(size=(3, 2, 5, 4))
        s = q @ np.swapaxes(k, -1, -2) / 2.0
        w = np.exp(s) / np.exp(s).sum(-1, keepdims=True)
        np.testing.assert_allclose(attention_reference(q, k, v), w @ v, rtol=1e-12)
