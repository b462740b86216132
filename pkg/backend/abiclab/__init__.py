"""abiclab: ABIC regularization-parameter selection and prior-mean bias studies
for linear ill-posed inverse problems."""

__version__ = "0.1.0"
