import numpy as np
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

@st.composite
def generate_cumsum_inputs(draw):
    a = draw(hnp.arrays(np.int64, st.integers(1, 20)))
    axis = draw(st.sampled_from([None, 0]))
    return a, axis

@given(generate_cumsum_inputs())
def test_cumsum(input_args):
    a, axis = input_args
    result = np.cumsum(a, axis=axis)
    assert len(result) == a.size
    assert result[-1] == a.sum()
