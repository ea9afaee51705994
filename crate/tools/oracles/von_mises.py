"""Reference values for the discrete von Mises encoding and the balanced loss.

Run with `python3 tools/oracles/von_mises.py`; the printed numbers are
frozen into crates/core/tests/oracles.rs.
"""
import mpmath as mp

mp.mp.dps = 40


def encode(mu, kappa, bins):
    centers = [2 * mp.pi * (m + mp.mpf(1) / 2) / bins for m in range(bins)]
    raw = [mp.e ** (kappa * mp.cos(c - mu)) for c in centers]
    z = mp.fsum(raw)
    return [r / z for r in raw]


def kl(p, q):
    return mp.fsum(a * mp.log(a / b) for a, b in zip(p, q) if a > 0)


def balanced_loss(labels, region, pred, alpha=None):
    ys = [y for y, r in zip(labels, region) if r]
    ps = [p for p, r in zip(pred, region) if r]
    a = mp.fsum(ys) / len(ys) if alpha is None else mp.mpf(alpha)
    acc = mp.fsum(a * (1 - y) * mp.log(1 - p) + (1 - a) * y * mp.log(p) for y, p in zip(ys, ps))
    return -acc / len(ys), a


def show(name, xs):
    print(f"{name} = [")
    for x in xs:
        print(f"    {mp.nstr(x, 20)},")
    print("]")


if __name__ == "__main__":
    show("VM_PI_2_K4_M16", encode(mp.pi / 2, 4, 16))
    show("VM_1_K0_5_M8", encode(mp.mpf(1), mp.mpf("0.5"), 8))
    show("VM_5_K10_M12", encode(mp.mpf(5), 10, 12))
    print("KL_A_B =", mp.nstr(kl(encode(mp.pi / 2, 4, 16), encode(mp.mpf(5), 2, 16)), 20))

    labels = [1, 0, 0, 1, 0, 0, 0, 1, 0]
    region = [1, 1, 1, 1, 0, 1, 1, 1, 1]
    pred = [mp.mpf(x) for x in ["0.9", "0.2", "0.35", "0.6", "0.5", "0.05", "0.7", "0.4", "0.15"]]
    loss, a = balanced_loss(labels, region, pred)
    print("LOSS_AUTO =", mp.nstr(loss, 20), "alpha =", mp.nstr(a, 20))
    loss, _ = balanced_loss(labels, region, pred, "0.5")
    print("LOSS_HALF =", mp.nstr(loss, 20))
