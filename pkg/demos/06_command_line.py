"""The same pipeline through the command line entry point.

Equivalent shell session:
    dimenet simulate --frames 60 --seed 1 --out train.json
    dimenet simulate --frames 10 --seed 2 --noise-2d 3 --noise-3d 0.1 --out test.json
    dimenet train --data train.json --epochs 5 --out model.json --curve curve.csv
    dimenet eval --model model.json --data test.json --out report
Run: python3 demos/06_command_line.py
"""
import os
import tempfile

from dimenet.cli import main

d = tempfile.mkdtemp()
p = lambda name: os.path.join(d, name)
steps = [
    ["simulate", "--frames", "60", "--seed", "1", "--out", p("train.json")],
    ["simulate", "--frames", "10", "--seed", "2", "--noise-2d", "3", "--noise-3d", "0.1", "--out", p("test.json")],
    ["train", "--data", p("train.json"), "--epochs", "5", "--out", p("model.json"), "--curve", p("curve.csv")],
    ["infer", "--model", p("model.json"), "--data", p("test.json")],
    ["eval", "--model", p("model.json"), "--data", p("test.json"), "--out", p("report")],
]
for argv in steps:
    print("$ dimenet " + " ".join(argv))
    rc = main(argv)
    print(f"(exit {rc})\n")
print("outputs in", d, sorted(os.listdir(d)))
