"""Independent re-implementation of the mock-v1 backend in plain Python.

Prints the values frozen in tests/unit/test_mock_backend.cpp. It shares no
code with the C++ library: hashing, the PRNG, attention and the step update
are written out again from the backend description.

    python3 tests/support/golden_mock.py
"""

import math
import struct

MASK = (1 << 64) - 1
C, H, W = 8, 4, 4
P = H * W
TOKENS, EMBED, HEAD = 4, 16, 8
BLOCKS = LAYERS = 3
NETWORK_SEED = 0xD1FF0510


def f32(x):
    return struct.unpack("<f", struct.pack("<f", x))[0]


def fnv1a64(data, h=0xCBF29CE484222325):
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & MASK
    return h


class SplitMix:
    def __init__(self, seed):
        self.s = seed & MASK

    def next(self):
        self.s = (self.s + 0x9E3779B97F4A7C15) & MASK
        z = self.s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def unit(self):
        return (self.next() >> 11) * 2.0**-53 * 2.0 - 1.0


def draw(rng, n, scale=1.0):
    return [f32(rng.unit() * scale) for _ in range(n)]


def network():
    rng = SplitMix(NETWORK_SEED)
    blocks = []
    for _ in range(BLOCKS):
        q = [rng.unit() / math.sqrt(C) for _ in range(C * HEAD)]
        k = [rng.unit() * 2.0 / math.sqrt(EMBED) for _ in range(EMBED * HEAD)]
        v = [rng.unit() / math.sqrt(EMBED) for _ in range(EMBED * HEAD)]
        o = [rng.unit() / math.sqrt(HEAD) for _ in range(HEAD * C)]
        blocks.append((q, k, v, o))
    return blocks


def embed(text):
    return draw(SplitMix(fnv1a64(text.encode())), TOKENS * EMBED)


def control(ref):
    out = []
    for layer in range(LAYERS):
        seed = fnv1a64(layer.to_bytes(8, "little"), fnv1a64(ref.encode()))
        out.append(draw(SplitMix(seed), C * P, 0.1))
    return out


def attend(hidden, block, emb):
    q_w, k_w, v_w, o_w = block
    keys = [[0.0] * HEAD for _ in range(TOKENS)]
    vals = [[0.0] * HEAD for _ in range(TOKENS)]
    for t in range(TOKENS):
        for j in range(HEAD):
            k = v = 0.0
            for e in range(EMBED):
                x = emb[t * EMBED + e]
                k += x * k_w[e * HEAD + j]
                v += x * v_w[e * HEAD + j]
            keys[t][j], vals[t][j] = k, v
    out = [0.0] * (P * C)
    for p in range(P):
        query = [0.0] * HEAD
        for j in range(HEAD):
            for c in range(C):
                query[j] += hidden[p * C + c] * q_w[c * HEAD + j]
        scores = []
        for t in range(TOKENS):
            s = 0.0
            for j in range(HEAD):
                s += query[j] * keys[t][j]
            scores.append(s * (1.0 / math.sqrt(HEAD)))
        peak = max(scores)
        scores = [math.exp(s - peak) for s in scores]
        total = sum(scores)
        mixed = [0.0] * HEAD
        for t in range(TOKENS):
            w = scores[t] / total
            for j in range(HEAD):
                mixed[j] += w * vals[t][j]
        for c in range(C):
            o = 0.0
            for j in range(HEAD):
                o += mixed[j] * o_w[j * C + c]
            out[p * C + c] = f32(o)
    return out


def generate(prompts, alpha, controls, seed, steps):
    net = network()
    embs = [embed(p) for p in prompts]
    bias = None
    for ref in controls:
        layers = control(ref)
        if bias is None:
            bias = layers
        else:
            bias = [[f32(a + b) for a, b in zip(x, y)] for x, y in zip(bias, layers)]
    latent = draw(SplitMix(seed), C * P)
    for _ in range(steps):
        hidden = [0.0] * (P * C)
        for c in range(C):
            for p in range(P):
                hidden[p * C + c] = latent[c * P + p]
        for b in range(BLOCKS):
            results = [attend(hidden, net[b], e) for e in embs]
            if len(results) == 1:
                attn = results[0]
            else:
                attn = [f32((1.0 - alpha) * x + alpha * y) for x, y in zip(*results)]
            for p in range(P):
                for c in range(C):
                    v = math.tanh(hidden[p * C + c] + attn[p * C + c])
                    if bias is not None:
                        v += bias[b][c * P + p]
                    hidden[p * C + c] = v
        latent = [f32(latent[c * P + p] + 0.1 * (hidden[p * C + c] - latent[c * P + p]))
                  for c in range(C) for p in range(P)]
    return latent


def show(name, values):
    print(name, ", ".join(repr(v) for v in values))


if __name__ == "__main__":
    show("encode_prompt('a')[0:4]", embed("a")[:4])
    show("initial_latent(0)[0:4]", draw(SplitMix(0), 4))
    print("control_layer_seed('edge:horse', 1)", hex(fnv1a64((1).to_bytes(8, "little"), fnv1a64(b"edge:horse"))))
    show("control('edge:horse')[2][0:4]", control("edge:horse")[2][:4])
    show("reference pelican seed 0 steps 5 [0:4]", generate(["a photo of a pelican"], 0.0, [], 0, 5)[:4])
    show("reference pelican + 2 controls seed 3 steps 4 [0:4]",
         generate(["a photo of a pelican"], 0.0, ["edge:horse", "pose:rider"], 3, 4)[:4])
    show("lerp 0.5 pelican/violin seed 7 steps 5 [0:4]", generate(["a pelican", "a violin"], 0.5, [], 7, 5)[:4])
