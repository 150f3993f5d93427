"""Arbitrary-precision reference values frozen into the C++ tests.

Run: python3 tests/oracles/loss_oracles.py
"""
from mpmath import mp, mpf, log, exp, sqrt, erfc

mp.dps = 40


def ce(p, k):
    return -log(p[k])


def entropy(p):
    return -sum(x * log(x) for x in p if x > 0)


def kl(p, q):
    return sum(a * log(a / b) for a, b in zip(p, q) if a > 0)


print("entropy([0.9,0.1])      =", mp.nstr(entropy([mpf("0.9"), mpf("0.1")]), 20))
print("kl([.5,.5] || [.9,.1])  =", mp.nstr(kl([mpf("0.5"), mpf("0.5")], [mpf("0.9"), mpf("0.1")]), 20))
print("ln 2 =", mp.nstr(log(2), 20), " ln 8 =", mp.nstr(log(8), 20))

# M = 2 joint adversarial loss over a batch that uses all four joint labels.
rows = [
    [mpf("0.40"), mpf("0.30"), mpf("0.20"), mpf("0.10")],
    [mpf("0.25"), mpf("0.25"), mpf("0.25"), mpf("0.25")],
    [mpf("0.05"), mpf("0.15"), mpf("0.70"), mpf("0.10")],
    [mpf("0.60"), mpf("0.10"), mpf("0.10"), mpf("0.20")],
]
# (domain, sentiment) -> positive block first: (0,pos)=0 (1,pos)=1 (0,neg)=2 (1,neg)=3
labels = [0, 1, 2, 3]
mean_ce = sum(ce(r, k) for r, k in zip(rows, labels)) / len(rows)
print("M=2 adversarial batch   =", mp.nstr(mean_ce, 20))

# VAT on a 2-D logistic model: p = sigmoid(w.x + b) as P(class 0).
w = [mpf("1.5"), mpf("-0.5")]
b = mpf("0.25")
x = [mpf("0.4"), mpf("0.8")]
r = [mpf("0.6"), mpf("0.8")]  # |r| = 1


def sigmoid(z):
    return 1 / (1 + exp(-z))


p = sigmoid(w[0] * x[0] + w[1] * x[1] + b)
q = sigmoid(w[0] * (x[0] + r[0]) + w[1] * (x[1] + r[1]) + b)
print("logistic VAT KL         =", mp.nstr(p * log(p / q) + (1 - p) * log((1 - p) / (1 - q)), 20))

# Adam, first step: p=0, g=1, lr=0.1, betas (0.9, 0.999), eps 1e-8.
m_hat = mpf(1)
v_hat = mpf(1)
print("adam step 1             =", mp.nstr(-mpf("0.1") * m_hat / (sqrt(v_hat) + mpf("1e-8")), 20))

# Bayes accuracy Phi(Delta/2) for unit-variance classes 4 apart.
delta = mpf(4)
print("Phi(2)                  =", mp.nstr(erfc(-delta / 2 / sqrt(2)) / 2, 20))
