import time

import fundusnet.gradcheck as gc


class TestGradientSuite:
    def test_all_ops_pass_finite_differences(self):
        start = time.monotonic()
        results = gc.run_suite(n_seeds=10)
        elapsed = time.monotonic() - start
        failures = [r for r in results if not r.passed]
        detail = ", ".join(f"{r.name}={r.max_rel_error:.2e}" for r in failures)
        assert not failures, f"gradient check failures: {detail}"
        assert elapsed < 120, f"gradient suite took {elapsed:.1f}s (budget 120s)"

    def test_report_lists_every_op_exactly_once(self):
        results = gc.run_suite(n_seeds=2)
        names = [r.name for r in results]
        assert len(names) == len(set(names))
        expected = {"conv2d", "conv2d_depthwise", "conv2d_strided",
                    "batchnorm2d_train", "batchnorm2d_eval", "relu", "relu6",
                    "silu", "prelu", "sigmoid", "global_avg_pool", "linear",
                    "add", "mul", "mul_scalar", "broadcast_mul_channels",
                    "reshape", "softmax_cross_entropy", "ilrb"}
        assert set(names) == expected

    def test_corrupted_gradient_is_flagged(self):
        results = gc.run_suite(n_seeds=2, include_corrupted=True)
        by_name = {r.name: r for r in results}
        assert not by_name["corrupted_gradient_fixture"].passed
