"""Walkthrough: generate a labeled dataset, train the activity model,
and inspect its quality.

Run with:  python3 demos/train_and_evaluate.py
"""

import numpy as np

from smartbag import dataset, nn

# 1. Synthesize a labeled dataset from the per-class signal profiles.
data = dataset.generate(dataset.default_profiles(), n=1743, seed=0)
print(f"dataset: {len(data)} rows, classes {data.classes}")
print(f"class counts: {dict(zip(data.classes, data.class_counts()))}")

# 2. 90/10 split, seeded so every run sees the same partition.
train_set, test_set = dataset.split(data, train_fraction=0.9, seed=0)
print(f"split: {len(train_set)} train / {len(test_set)} test")

# 3. Train with the default recipe (10 epochs, batch 128, Adam at 1e-3).
spec = nn.ModelSpec()  # (13, 15, 20, 25, 30, 60, 5)
model, report = nn.train(train_set, spec, nn.Hyperparams(), test_set=test_set)
for epoch, value in enumerate(report.epoch_losses, start=1):
    print(f"epoch {epoch:2d}  loss {value:.4f}")
print(f"train accuracy {report.train_accuracy:.4f}, "
      f"test accuracy {report.test_accuracy:.4f}")

# 4. The confusion matrix: rows are true classes, columns predictions.
print(np.array2string(report.confusion))

# 5. Round-trip the model through its binary file form and classify a row.
blob = nn.export_model(model, spec, data.classes)
model2, _, vocab = nn.import_model(blob)
cls, probs = nn.predict(model2, test_set.features[0])
print(f"first test row -> {vocab[cls]} "
      f"(true {vocab[test_set.labels[0]]}, p={probs[cls]:.3f})")
