import numpy as np
import pytest

from promptforge.cli import main
from promptforge.data import generate_synthetic, load_directory, save_dataset
from promptforge.experiment import (
    ExperimentConfig,
    format_config,
    parse_config,
    read_report_config,
    run_experiment,
)
from promptforge.training import TrainedState


def tiny_config(**kw):
    base = dict(
        classes=4, per_class=3, methods=("coop",), seeds=(0,),
        epochs=0, shots=2,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestConfigFormat:
    def test_round_trip(self):
        cfg = ExperimentConfig(methods=("coop", "full"), seeds=(3, 4), lam=0.35)
        assert parse_config(format_config(cfg)) == cfg

    def test_lambda_key_spelling(self):
        cfg = parse_config("lambda=0.4\n")
        assert cfg.lam == 0.4
        assert "lambda=0.4" in format_config(cfg)

    def test_blank_lines_and_comments_ignored(self):
        cfg = parse_config("\n# a comment\nepochs=3\n\n")
        assert cfg.epochs == 3

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config("optimizer=adam\n")

    def test_missing_equals_rejected(self):
        with pytest.raises(ValueError, match="key=value"):
            parse_config("epochs 3\n")

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown method"):
            parse_config("methods=coop,warp\n")

    def test_empty_method_list_rejected(self):
        with pytest.raises(ValueError):
            parse_config("methods=\n")

    def test_defaults_match_documented_values(self):
        cfg = ExperimentConfig()
        assert cfg.epochs == 10 and cfg.base_lr == 0.002 and cfg.lam == 0.2
        assert cfg.seeds == (0, 1, 2)
        assert cfg.methods == ("coop", "cocoop", "mlp", "full")


class TestRunExperiment:
    def test_smoke_untrained_sweep(self, tmp_path):
        out = run_experiment(tiny_config(), tmp_path / "report")
        csv = (out / "results.csv").read_text().splitlines()
        assert csv[0] == "method,seed,base,new,hos,discrimination"
        assert len(csv) == 2
        method, seed, base, new, hos, disc = csv[1].split(",")
        assert method == "coop" and seed == "0"
        assert 0.0 <= float(base) <= 100.0 and 0.0 <= float(new) <= 100.0
        assert (out / "coop_seed0.ckpt").exists()
        assert (out / "summary.md").exists()

    def test_summary_config_echo_round_trips(self, tmp_path):
        cfg = tiny_config(methods=("coop", "ctp"), seeds=(1, 2), epochs=1)
        out = run_experiment(cfg, tmp_path / "r")
        echoed = read_report_config((out / "summary.md").read_text())
        assert echoed == cfg

    def test_identical_seeds_give_identical_rows(self, tmp_path):
        cfg = tiny_config(seeds=(5, 5), epochs=1)
        out = run_experiment(cfg, tmp_path / "rep")
        rows = (out / "results.csv").read_text().splitlines()[1:]
        a, b = (r.split(",", 2)[2] for r in rows)
        assert a == b

    def test_bitwise_deterministic_reports_and_checkpoints(self, tmp_path):
        cfg = tiny_config(methods=("full",), epochs=1, per_class=4, shots=3)
        out1 = run_experiment(cfg, tmp_path / "a")
        out2 = run_experiment(cfg, tmp_path / "b")
        for name in ("results.csv", "summary.md", "full_seed0.ckpt"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_directory_dataset_source(self, tmp_path):
        ds = generate_synthetic(4, 3, seed=1)
        data_dir = save_dataset(ds, tmp_path / "data")
        cfg = tiny_config(dataset=str(data_dir))
        out = run_experiment(cfg, tmp_path / "rep")
        assert (out / "results.csv").exists()


class TestCli:
    def test_gen_data_round_trip(self, tmp_path, capsys):
        out_dir = tmp_path / "ds"
        code = main(["gen-data", "--classes", "4", "--per-class", "2",
                     "--seed", "3", "--out", str(out_dir)])
        assert code == 0
        loaded = load_directory(out_dir)
        assert len(loaded) == 8
        expected = generate_synthetic(4, 2, seed=3)
        assert sorted(loaded.class_names) == sorted(expected.class_names)

    def test_run_eval_heatmap_pipeline(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        assert main(["gen-data", "--classes", "4", "--per-class", "3",
                     "--seed", "0", "--out", str(data_dir)]) == 0
        config = tmp_path / "exp.cfg"
        config.write_text(
            f"dataset={data_dir}\nmethods=full\nseeds=0\nepochs=0\nshots=2\n"
        )
        report = tmp_path / "report"
        assert main(["run", "--config", str(config), "--out", str(report)]) == 0
        ckpt = report / "full_seed0.ckpt"
        assert ckpt.exists()

        assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data_dir),
                     "--split", "base"]) == 0
        line = capsys.readouterr().out.strip().splitlines()[-1]
        assert line.startswith("base accuracy:")

        heat = tmp_path / "map.pgm"
        assert main(["heatmap", "--checkpoint", str(ckpt), "--image", "0",
                     "--class", "1", "--out", str(heat),
                     "--data", str(data_dir)]) == 0
        assert heat.read_text().startswith("P2\n")
        assert (tmp_path / "map.pgm.csv").exists()

    def test_heatmap_rejected_for_methods_without_attention(self, tmp_path, capsys):
        data_dir = tmp_path / "data"
        main(["gen-data", "--classes", "4", "--per-class", "3", "--seed", "0",
              "--out", str(data_dir)])
        config = tmp_path / "exp.cfg"
        config.write_text(
            f"dataset={data_dir}\nmethods=coop\nseeds=0\nepochs=0\nshots=2\n"
        )
        report = tmp_path / "report"
        main(["run", "--config", str(config), "--out", str(report)])
        code = main(["heatmap", "--checkpoint", str(report / "coop_seed0.ckpt"),
                     "--image", "0", "--class", "0",
                     "--out", str(tmp_path / "x.pgm"), "--data", str(data_dir)])
        assert code == 1
        assert "attention" in capsys.readouterr().err

    def test_bad_config_exits_nonzero(self, tmp_path, capsys):
        config = tmp_path / "bad.cfg"
        config.write_text("no_such_key=1\n")
        assert main(["run", "--config", str(config)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_checkpoint_exits_nonzero(self, tmp_path, capsys):
        assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                     "--data", str(tmp_path), "--split", "base"]) == 1
