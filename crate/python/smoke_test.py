"""Smoke test for the Python extension: build a tiny model, train it briefly
on synthetic drive cycles, score a sequence and check the metric helpers."""

import math
import os
import tempfile

import mavae


def windows(rows, w, shift):
    return [rows[i : i + w] for i in range(0, len(rows) - w + 1, shift)]


def normalise(rows, mean, std):
    return [[(v - m) / s for v, m, s in zip(r, mean, std)] for r in rows]


def main():
    names, first = mavae.generate_cycle(seed=1, index=0, duration_s=60.0)
    assert names == mavae.CHANNELS and len(first[0]) == 13

    cycles = [mavae.generate_cycle(1, i, duration_s=60.0)[1] for i in range(4)]
    flat = [r for c in cycles for r in c]
    mean = [sum(col) / len(flat) for col in zip(*flat)]
    std = [max(math.sqrt(sum((v - m) ** 2 for v in col) / len(flat)), 1e-8) for col, m in zip(zip(*flat), mean)]
    cycles = [normalise(c, mean, std) for c in cycles]

    model = mavae.Mavae(window=16, input_dim=13, latent_dim=2, heads=2, outer_units=6, inner_units=4, seed=0)
    train_w = [w for c in cycles[:3] for w in windows(c, 16, 8)]
    val_w = windows(cycles[3], 16, 8)
    trained, history = mavae.train(model, train_w, val_w, batch_size=16, max_epochs=3, patience=10)
    assert len(history) == 3 and all(math.isfinite(h["recon"]) for h in history)

    scores, mu, sigma = trained.score(cycles[3], reverse_mode="mean")
    assert len(scores) == len(cycles[3]) and len(mu[0]) == 13
    assert all(s > 0 for row in sigma for s in row)

    heads = trained.attention_scores(cycles[3][:16])
    assert len(heads) == 2 and all(abs(sum(r) - 1.0) < 1e-12 for h in heads for r in h)

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        trained.save(path)
        again = mavae.Mavae.load(path)
        assert again.reconstruct(cycles[3][:16]) == trained.reconstruct(cycles[3][:16])

    assert [mavae.beta_at_epoch(e) for e in (0, 25, 49, 50)] == [0.0, 1e-8, 1e-2, 1e-8]
    assert mavae.precision_recall_f1(3, 1, 2, 4)[:2] == (0.75, 0.6)
    _, area = mavae.pr_curve([1.0, 2.0, 5.0, 6.0], [False, False, True, True])
    assert abs(area - 1.0) < 1e-12

    try:
        mavae.reverse_window([[[0.0]]], [[[1.0]]], 5)
    except ValueError:
        pass
    else:
        raise AssertionError("window count mismatch should raise")

    print(f"ok: {trained.num_parameters} parameters, final val_recon {history[-1]['val_recon']:.3f}")


if __name__ == "__main__":
    main()
