#!/usr/bin/env python3
# Copyright 2026 The cexplain Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Writes reference traces for bundle sampling (SplitMix64 + Fisher-Yates).

Standalone on purpose: it shares no code with the C++ sampler, so the
committed traces act as an independent check of it.

  python3 tools/sampling_reference.py fixtures/sampling/reference_traces.json
"""

import json
import sys

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)


def sample(ids, seed, n):
    order = sorted(ids)
    rng = SplitMix64(seed)
    for i in range(len(order) - 1, 0, -1):
        j = rng.next() % (i + 1)
        order[i], order[j] = order[j], order[i]
    return order[:n]


def main(path):
    letters = [chr(ord("a") + i) for i in range(8)]
    rng = SplitMix64(0)
    cases = [
        {"ids": letters, "seed": 0, "n": 3},
        {"ids": letters, "seed": 0, "n": 8},
        {"ids": list(reversed(letters)), "seed": 0, "n": 3},
        {"ids": ["image_%02d" % i for i in range(12)], "seed": 0, "n": 8},
        {"ids": ["image_%02d" % i for i in range(12)], "seed": 42, "n": 8},
    ]
    for case in cases:
        case["expected"] = sample(case["ids"], case["seed"], case["n"])
    out = {
        "splitmix64_seed0_first5": [str(rng.next()) for _ in range(5)],
        "cases": cases,
    }
    with open(path, "w") as f:
        json.dump(out, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1])
