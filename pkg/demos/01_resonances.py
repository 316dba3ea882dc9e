"""Which monomials can a polynomial change of coordinates never remove?

A term x^a d_i in a field with linear part sum lambda_i x_i d_i is removable
exactly when <a, lambda> - lambda_i is nonzero. This script scans a few
spectra and prints the offending monomials.
"""

from morsenorm.spectrum import check_N_linearity

for lams in ([2, 1], [2, -2], [1, 1], [3, 1, -1]):
    rep = check_N_linearity(lams, 4)
    print(f"lambda = {lams}: {'nonresonant' if rep.satisfied else 'resonant'} through order 4")
    for w in rep.witnesses[:6]:
        print("   ", w)

# floats are compared with a relative zero test; the golden ratio never resonates
phi = (1 + 5 ** 0.5) / 2
print("lambda = (1, -phi):", check_N_linearity([1.0, -phi], 10, "float").satisfied)
