import pytest

from analysis import base_cost_report, cost_grid, cost_report, cost_table, count_flops, count_params
from model import BaseConfig, BaseInput, Beta, FusionSpec, enumerate_space

BASE = BaseConfig()
ALPHAS = range(1, BASE.num_layers + 1)


def spec(alpha, beta):
    return FusionSpec(alpha, beta, BASE)


class TestCostRelations:
    @pytest.mark.parametrize("counter", [count_params, count_flops])
    def test_add_and_mul_cost_the_same(self, counter):
        for alpha in ALPHAS:
            assert counter(spec(alpha, Beta.ADD)) == counter(spec(alpha, Beta.MUL))

    @pytest.mark.parametrize("counter", [count_params, count_flops])
    def test_costs_grow_with_alpha(self, counter):
        for beta in Beta:
            values = [counter(spec(alpha, beta)) for alpha in ALPHAS]
            assert values == sorted(values)

    def test_concat_costs_more_params(self):
        for alpha in ALPHAS:
            add, cat = count_params(spec(alpha, Beta.ADD)), count_params(spec(alpha, Beta.CONCAT))
            if alpha < BASE.num_layers:
                assert cat > add
            else:
                assert cat >= add

    def test_concat_costs_more_flops(self):
        for alpha in ALPHAS:
            assert count_flops(spec(alpha, Beta.CONCAT)) > count_flops(spec(alpha, Beta.ADD))

    def test_fusion_model_costs_more_than_base(self):
        base = base_cost_report(BASE, 1, BaseInput.IMAGE)
        for s in enumerate_space(BASE):
            assert cost_report(s).param_count > base.param_count


class TestCostReport:
    def test_per_layer_sums_to_totals(self):
        report = cost_report(spec(2, Beta.CONCAT))
        assert sum(c.params for c in report.per_layer) == report.param_count
        assert sum(c.flops for c in report.per_layer) == report.flops

    def test_first_conv_by_hand(self):
        report = cost_report(spec(1, Beta.ADD))
        first = report.per_layer[0]
        assert first.name == "branch1.conv1"
        assert first.params == 16 * (1 * 27 + 1)
        assert first.flops == 2 * 27 * 1 * 16 * 32 ** 3

    def test_elementwise_layers_cost_one_op_per_output(self):
        costs = {c.name: c for c in cost_report(spec(1, Beta.ADD)).per_layer}
        voxels = 16 * 32 ** 3
        assert costs["branch1.bn1"].flops == voxels
        assert costs["branch1.bn1"].params == 2 * 16
        assert costs["branch1.relu1"].flops == voxels
        assert costs["branch1.pool1"].flops == 16 * 16 ** 3
        assert costs["fusion"].flops == 16 * 16 ** 3
        assert costs["sigmoid"].flops == 1

    def test_branch_layers_counted_twice(self):
        names = [c.name for c in cost_report(spec(3, Beta.ADD)).per_layer]
        assert names.count("branch1.conv3") == 1
        assert names.count("branch2.conv3") == 1
        assert "trunk.conv3" not in names
        assert "trunk.conv4" in names

    def test_granular_entries(self):
        names = [c.name for c in cost_report(spec(6, Beta.MUL)).per_layer]
        for expected in ("fusion", "fc1", "fc1_relu", "fc2", "sigmoid", "branch1.bn1", "branch1.relu1", "branch1.pool1"):
            assert expected in names
        assert "branch1.pool6" not in names

    def test_to_dict(self):
        data = cost_report(spec(1, Beta.CONCAT)).to_dict()
        assert data["name"] == "FusionNet1⊕"
        assert data["spec"]["alpha"] == 1


class TestTables:
    def test_cost_table_has_a_row_per_spec(self):
        reports = [cost_report(s) for s in enumerate_space(BASE)]
        lines = cost_table(reports).splitlines()
        assert len(lines) == 2 + 18
        assert any(line.startswith("FusionNet3*") for line in lines)

    def test_cost_grid_has_block_per_beta(self):
        grid = cost_grid([cost_report(s) for s in enumerate_space(BASE)])
        for beta in Beta:
            assert f"β={beta.symbol}" in grid

    def test_base_report_label(self):
        assert base_cost_report(BASE, 2).name == "Early"
