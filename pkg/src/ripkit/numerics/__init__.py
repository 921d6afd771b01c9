from ripkit.numerics.linalg import EigenResult, null_space, pseudoinverse, svd, symmetric_eig
from ripkit.numerics.lp import LpProblem, LpResult, solve_lp
from ripkit.numerics.matrix import as_matrix, matrix_from_json, matrix_to_json
from ripkit.numerics.rng import RngStream, derive_seed, rng_gaussian, rng_sign

__all__ = [
    "EigenResult", "LpProblem", "LpResult", "RngStream", "as_matrix", "derive_seed",
    "matrix_from_json", "matrix_to_json", "null_space", "pseudoinverse", "rng_gaussian",
    "rng_sign", "solve_lp", "svd", "symmetric_eig",
]
