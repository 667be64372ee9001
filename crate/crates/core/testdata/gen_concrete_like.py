"""Regenerates concrete_like.csv: 1030 synthetic mixes, 8 inputs, strength in MPa."""
import numpy as np

rng = np.random.default_rng(20240611)
n = 1030
cement = rng.uniform(100, 540, n)
slag = np.where(rng.random(n) < 0.45, 0.0, rng.uniform(10, 360, n))
fly_ash = np.where(rng.random(n) < 0.55, 0.0, rng.uniform(20, 200, n))
water = rng.uniform(120, 247, n)
superplasticizer = np.where(rng.random(n) < 0.37, 0.0, rng.uniform(1, 32, n))
coarse = rng.uniform(800, 1145, n)
fine = rng.uniform(594, 993, n)
age = rng.choice([1, 3, 7, 14, 28, 56, 90, 180, 365], n, p=[.02, .13, .12, .05, .41, .09, .1, .04, .04])

binder = cement + 0.7 * slag + 0.35 * fly_ash
ratio = binder / (water - 2.5 * superplasticizer)
maturity = np.log1p(age) / np.log1p(28.0)
strength = 11.5 * ratio ** 1.1 * maturity ** 0.8 - 0.004 * (fine - 780) + rng.normal(0, 4.0, n)
strength = np.clip(strength, 2.3, 82.6)

cols = [cement, slag, fly_ash, water, superplasticizer, coarse, fine, age, strength]
names = ["cement", "slag", "fly_ash", "water", "superplasticizer", "coarse_aggregate",
         "fine_aggregate", "age", "strength"]
with open("concrete_like.csv", "w") as f:
    f.write(",".join(names) + "\n")
    for row in zip(*cols):
        f.write(",".join(f"{v:.2f}" if i < 8 else f"{v:.3f}" for i, v in enumerate(row)) + "\n")
