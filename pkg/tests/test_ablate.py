from rfsr.ablate import GROUPS, consistency_rows, flow_rows, run_ablation, scheduler_rows, slug, time_rows
from rfsr.config import ExperimentConfig
from rfsr.metrics import EvalReport


def test_row_sets():
    assert [r.label for r in flow_rows()] == ["Noise->HR", "noised LR->HR", "SR Flow (ours)"]
    assert all(r.steps == (4, 1) for r in flow_rows())
    assert [r.label for r in consistency_rows()] == ["SR Flow", "w/ L_cd", "w/ L_hr", "w/ L_hrcd"]
    assert [r.label for r in scheduler_rows(1000)] == [
        "N-Interval (50)", "N-Interval (18)", "N-Interval (4)", "Slow Only (1000)",
        "Fast-Slow (8)", "Fast-Slow (4)", "Fast-Slow (1)"]
    assert len(time_rows()) == 6 and set(GROUPS) == {"flow", "consistency", "scheduler", "time"}


def test_slugs_unique():
    labels = [r.label for g in GROUPS.values() for r in (g(1000) if g is scheduler_rows else g())]
    assert len({slug(x) for x in labels}) == len(set(labels))
    assert slug("noised LR->HR") == "noised_lr_to_hr" and slug("w/ L_cd") == "w_w_l_cd"


def test_tiny_consistency_group(tmp_path):
    base = ExperimentConfig().with_overrides([
        "net.base_channels=4", "net.time_embed_dim=8", "net.disc_channels=4", "data.hr_size=16",
        "data.train_size=4", "data.eval_size=2", "train.batch=4", "train.flow_steps=1", "train.distill_steps=1",
        "train.eval_every=0", "sched.slow_steps=20"])
    res = run_ablation(base, ["consistency"], [0, 1], tmp_path)
    assert list(res["consistency"]) == [r.label for r in consistency_rows()]
    # stage-1 teacher per seed is trained once and shared by every row
    assert len(list((tmp_path / "_runs").glob("flow_pretrain_*/seed*"))) == 2
    for row in consistency_rows():
        rep = EvalReport.from_jsonl((tmp_path / "consistency" / f"{slug(row.label)}.jsonl").read_text())
        assert rep.seeds == [0, 1] and rep.config_text
        assert [r.steps for r in rep.rows if r.method == row.label] == list(row.steps)
        for s in (0, 1):
            assert (tmp_path / "consistency" / "seeds" / f"{slug(row.label)}_seed{s}.txt").exists()
    assert "w/ L_hrcd" in (tmp_path / "consistency" / "summary.txt").read_text()
