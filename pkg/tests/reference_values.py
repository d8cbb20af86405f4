"""Published summary values used as fixed targets."""

SAMPLE_SIZE = 567

# (npar, LL, BIC, aBIC, CAIC, AWE) for 1..7 classes
FIT_SUMMARY = [
    (13, -3840.13, 7762.68, 7721.41, 7775.68, 7884.11),
    (27, -3647.65, 7466.49, 7380.77, 7493.49, 7718.68),
    (41, -3596.93, 7453.81, 7323.65, 7494.81, 7836.76),
    (55, -3576.71, 7502.15, 7327.55, 7557.15, 8015.87),
    (69, -3558.81, 7555.10, 7336.06, 7624.10, 8199.59),
    (83, -3542.47, 7611.19, 7347.71, 7694.19, 8386.44),
    (97, -3526.55, 7668.12, 7360.19, 7765.12, 8574.14),
]

# (AvePP, class proportion, OCC) for the three-class solution
CLASS_DIAGNOSTICS = [
    (1.000, 0.273, float("inf")),
    (0.944, 0.497, 17.06),
    (0.879, 0.229, 24.46),
]
