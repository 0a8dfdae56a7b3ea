import pytest

from lmlp import pgm
from lmlp.cli import main
from lmlp.config import RunConfig, serialize_config
from lmlp.train import checkpoint_name, run_training


@pytest.fixture()
def trained_checkpoint(tmp_path):
    config = RunConfig(image_side=8, embed_dim=8, depth=2, text_tokens=3,
                       mlp_scale=2.0, num_samples=8, train_steps=2, batch_size=2,
                       warmup_steps=1, checkpoint_every=2,
                       out_dir=str(tmp_path / "train"))
    run_training(config)
    return tmp_path / "train" / checkpoint_name(2)


class TestBench:
    def test_paper_rows(self, capsys):
        assert main(["bench", "--paper"]) == 0
        out = capsys.readouterr().out
        assert "transformer-s4" in out and "lmlp-s4" in out
        csv_line = [l for l in out.splitlines() if l.startswith("lmlp-s4,")][0]
        macs = float(csv_line.split(",")[4])
        assert abs(macs / 0.933e9 - 1.0) < 5e-3

    def test_csv_file_output(self, tmp_path, capsys):
        path = tmp_path / "table.csv"
        assert main(["bench", "--paper", "--csv", str(path)]) == 0
        assert path.read_text().startswith("name,L,D,s,macs,params,mp_ratio")

    def test_measure_reports_exact_match(self, capsys):
        assert main(["bench", "--measure", "D2:6:8:2"]) == 0
        assert "exact=yes" in capsys.readouterr().out

    def test_no_arguments_is_usage_error(self, capsys):
        assert main(["bench"]) == 2
        assert "error:" in capsys.readouterr().err

    def test_bad_row_spec(self, capsys):
        assert main(["bench", "--row", "x:1:2"]) == 2

    def test_custom_row(self, capsys):
        assert main(["bench", "--row", "mine:10:16:2:lmlp"]) == 0
        assert "mine" in capsys.readouterr().out


class TestTrainCommand:
    def test_train_with_flags(self, tmp_path, capsys):
        code = main(["train", "--image-side", "8", "--embed-dim", "8", "--depth", "2",
                     "--text-tokens", "3", "--mlp-scale", "2.0", "--num-samples", "8",
                     "--train-steps", "2", "--batch-size", "2", "--warmup-steps", "1",
                     "--checkpoint-every", "2", "--out-dir", str(tmp_path / "t")])
        assert code == 0
        assert (tmp_path / "t" / "loss_log.csv").exists()

    def test_train_with_config_file(self, tmp_path):
        config = RunConfig(image_side=8, embed_dim=8, depth=2, text_tokens=3,
                           mlp_scale=2.0, num_samples=8, train_steps=1, batch_size=2,
                           warmup_steps=1, checkpoint_every=1,
                           out_dir=str(tmp_path / "c"))
        path = tmp_path / "run.cfg"
        path.write_text(serialize_config(config))
        assert main(["train", "--config", str(path)]) == 0
        assert (tmp_path / "c" / checkpoint_name(1)).exists()

    def test_bad_config_key_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("[run]\nbananas = 1\n")
        assert main(["train", "--config", str(path)]) == 2
        err = capsys.readouterr().err
        assert "bananas" in err and err.count("\n") == 1

    def test_show_config_round_trips(self, capsys):
        assert main(["show-config", "--seed", "9"]) == 0
        out = capsys.readouterr().out
        assert "seed = 9" in out

    def test_missing_config_file_exits_1(self, capsys):
        assert main(["train", "--config", "/no/such/file.cfg"]) == 1


class TestSampleCommand:
    def test_sample_writes_one_file_per_caption(self, trained_checkpoint, tmp_path, capsys):
        captions = tmp_path / "captions.txt"
        captions.write_text("square top-left bright\ndisk center dim\n"
                            "cross bottom-right bright\nsquare top-right dim\n")
        out = tmp_path / "samples"
        code = main(["sample", "--checkpoint", str(trained_checkpoint),
                     "--captions", str(captions), "--steps", "5", "--seed", "3",
                     "--out-dir", str(out)])
        assert code == 0
        images = sorted(p.name for p in out.glob("*.pgm"))
        assert len(images) == 4
        assert "seed3" in images[0] and "w1" in images[0]
        assert len(list(out.glob("*.csv"))) == 4

    def test_same_seed_bitwise_identical_files(self, trained_checkpoint, tmp_path):
        captions = tmp_path / "c.txt"
        captions.write_text("square center bright\n")
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["sample", "--checkpoint", str(trained_checkpoint),
                         "--captions", str(captions), "--steps", "4", "--seed", "7",
                         "--out-dir", str(out)]) == 0
        for name in sorted(p.name for p in out_a.iterdir()):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_null_captions_make_guidance_scale_irrelevant(self, trained_checkpoint, tmp_path):
        """All-null captions tie the conditional and unconditional branches, so
        omega = 0 and omega = -1 produce identical images."""
        captions = tmp_path / "null.txt"
        captions.write_text("<null>\n")
        outputs = {}
        for omega in ("0", "-1"):
            out = tmp_path / f"w{omega}"
            assert main(["sample", "--checkpoint", str(trained_checkpoint),
                         "--captions", str(captions), "--cfg-scale", omega,
                         "--steps", "4", "--seed", "2", "--out-dir", str(out)]) == 0
            outputs[omega] = next(out.glob("*.csv")).read_bytes()
        assert outputs["0"] == outputs["-1"]

    def test_unknown_caption_token_exits_2(self, trained_checkpoint, tmp_path, capsys):
        captions = tmp_path / "bad.txt"
        captions.write_text("square warp-speed bright\n")
        code = main(["sample", "--checkpoint", str(trained_checkpoint),
                     "--captions", str(captions), "--steps", "2",
                     "--out-dir", str(tmp_path / "s")])
        assert code == 2
        assert "warp-speed" in capsys.readouterr().err


class TestInspectCommand:
    def test_inspect_all_layers(self, trained_checkpoint, tmp_path):
        out = tmp_path / "maps"
        code = main(["inspect", "--checkpoint", str(trained_checkpoint),
                     "--all-layers", "--format", "pgm", "--out-dir", str(out)])
        assert code == 0
        maps = sorted(p.name for p in out.glob("*.pgm"))
        assert maps == ["weights_layer00_left.pgm", "weights_layer00_right.pgm",
                        "weights_layer01_left.pgm", "weights_layer01_right.pgm"]
        stats = (out / "region_stats.csv").read_text().splitlines()
        assert stats[0] == "layer,side,region,mean,std"
        assert len(stats) == 1 + 2 * 4  # four regions per left map

    def test_exported_values_in_unit_range(self, trained_checkpoint, tmp_path):
        out = tmp_path / "maps_csv"
        assert main(["inspect", "--checkpoint", str(trained_checkpoint),
                     "--layer", "0", "--side", "left", "--format", "csv",
                     "--out-dir", str(out)]) == 0
        from lmlp.analysis import read_map_csv
        values = read_map_csv(out / "weights_layer00_left.csv")
        assert values.min() >= 0.0 and values.max() <= 1.0

    def test_layer_without_flag_is_usage_error(self, trained_checkpoint, tmp_path):
        assert main(["inspect", "--checkpoint", str(trained_checkpoint),
                     "--out-dir", str(tmp_path / "x")]) == 2


class TestGenDataCommand:
    def test_gen_data_and_determinism(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["gen-data", "--seed", "5", "--count", "4",
                         "--out-dir", str(out)]) == 0
        for name in sorted(p.name for p in a.iterdir()):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        img = pgm.read_pgm(a / "00000.pgm")
        assert img.shape == (8, 8)

    def test_zero_count(self, tmp_path):
        out = tmp_path / "zero"
        assert main(["gen-data", "--seed", "1", "--count", "0",
                     "--out-dir", str(out)]) == 0
        assert (out / "captions.tsv").read_text() == "index\ttoken_ids\n"

    def test_bad_side_exits_2(self, tmp_path, capsys):
        assert main(["gen-data", "--seed", "1", "--count", "1", "--side", "9",
                     "--out-dir", str(tmp_path / "x")]) == 2

    def test_unknown_command_exits_2(self):
        assert main(["frobnicate"]) == 2
