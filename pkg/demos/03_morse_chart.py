"""A Morse chart as a jet: f o chart^{-1} is a weighted sum of squares."""

from morsenorm.jets import jet_compose
from morsenorm.normal_form import morse_lemma_jet
from morsenorm.parser import format_jet, parse_expression

f = parse_expression("x1^2 + 3*x1*x2 - x2^2 + x1^3 - x1*x2^2 + x2^4", 2, 6)
m = morse_lemma_jet(f)
print("f               =", format_jet(f))
print("index           =", m.index)
print("signs, weights  =", m.signs, [str(w) for w in m.weights])
for k, c in enumerate(m.chart.components, 1):
    print(f"chart_{k}         =", format_jet(c))
# exact, through order 6
print("f o chart^-1    =", format_jet(jet_compose(f, m.chart_inverse)))
