import numpy as np

from lmlp.checkpoint import load_checkpoint
from lmlp.config import RunConfig
from lmlp.train import LOG_HEADER, checkpoint_name, run_training


def tiny_config(out_dir, **overrides):
    base = dict(image_side=8, embed_dim=8, depth=2, text_tokens=3, mlp_scale=2.0,
                preset="F2", skip_mode="second_stage", num_samples=16, train_steps=6,
                batch_size=2, warmup_steps=2, checkpoint_every=2, out_dir=str(out_dir))
    base.update(overrides)
    return RunConfig(**base)


class TestTraining:
    def test_zero_steps_writes_init_checkpoint_and_empty_log(self, tmp_path):
        config = tiny_config(tmp_path / "zero", train_steps=0)
        result = run_training(config)
        assert (tmp_path / "zero" / checkpoint_name(0)).exists()
        assert result.log_path.read_text() == LOG_HEADER + "\n"

    def test_loss_log_format(self, tmp_path):
        config = tiny_config(tmp_path / "run")
        result = run_training(config)
        lines = result.log_path.read_text().splitlines()
        assert lines[0] == LOG_HEADER
        assert len(lines) == 1 + config.train_steps
        step, loss = lines[3].split(",")
        assert int(step) == 2
        assert np.isfinite(float(loss))

    def test_checkpoints_written_on_schedule(self, tmp_path):
        config = tiny_config(tmp_path / "ckpt")
        run_training(config)
        names = sorted(p.name for p in (tmp_path / "ckpt").glob("*.lmlp"))
        assert names == [checkpoint_name(2), checkpoint_name(4), checkpoint_name(6)]

    def test_training_is_deterministic_per_seed(self, tmp_path):
        log_a = run_training(tiny_config(tmp_path / "a")).log_path.read_text()
        log_b = run_training(tiny_config(tmp_path / "b")).log_path.read_text()
        assert log_a == log_b

    def test_different_seed_changes_losses(self, tmp_path):
        log_a = run_training(tiny_config(tmp_path / "a")).log_path.read_text()
        log_c = run_training(tiny_config(tmp_path / "c", seed=1)).log_path.read_text()
        assert log_a != log_c

    def test_resume_reproduces_uninterrupted_log_bitwise(self, tmp_path):
        full = run_training(tiny_config(tmp_path / "full", train_steps=6))
        half_dir = tmp_path / "half"
        run_training(tiny_config(half_dir, train_steps=3, checkpoint_every=3))
        resumed = run_training(tiny_config(half_dir, train_steps=6, checkpoint_every=3),
                               resume=half_dir / checkpoint_name(3))
        assert resumed.log_path.read_text() == full.log_path.read_text()

    def test_resumed_final_weights_match_uninterrupted(self, tmp_path):
        full = run_training(tiny_config(tmp_path / "f2", train_steps=6))
        half_dir = tmp_path / "h2"
        run_training(tiny_config(half_dir, train_steps=2, checkpoint_every=2))
        run_training(tiny_config(half_dir, train_steps=6, checkpoint_every=2),
                     resume=half_dir / checkpoint_name(2))
        a = load_checkpoint(full.final_checkpoint)
        b = load_checkpoint(half_dir / checkpoint_name(6))
        assert a.params.keys() == b.params.keys()
        for name in a.params:
            assert np.array_equal(a.params[name], b.params[name]), name

    def test_grad_accumulation_changes_effective_batch(self, tmp_path):
        plain = run_training(tiny_config(tmp_path / "p", grad_accumulation=1))
        accum = run_training(tiny_config(tmp_path / "q", grad_accumulation=2))
        assert plain.losses != accum.losses

    def test_checkpoint_embeds_config(self, tmp_path):
        config = tiny_config(tmp_path / "emb")
        result = run_training(config)
        snapshot = load_checkpoint(result.final_checkpoint)
        assert snapshot.config == config
        assert snapshot.step == config.train_steps
