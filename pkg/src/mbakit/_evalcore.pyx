# cython: boundscheck=False, wraparound=False, language_level=3
"""Compiled kernel for batched w-bit evaluation of expression programs.

Runs a postfix program (see mbakit.progeval) over a matrix of variable
assignments, one row per assignment, entirely in C.  Arithmetic wraps
modulo 2**width via the supplied mask.
"""

from libc.stdlib cimport free, malloc

import numpy as np


def eval_program(const unsigned char[::1] codes,
                 const unsigned long long[::1] args,
                 const unsigned long long[:, :] assigns,
                 unsigned long long mask,
                 int max_stack):
    cdef Py_ssize_t n_ops = codes.shape[0]
    cdef Py_ssize_t rows = assigns.shape[0]
    out = np.empty(rows, dtype=np.uint64)
    cdef unsigned long long[::1] out_v = out
    cdef unsigned long long *stack
    cdef Py_ssize_t r, i
    cdef int sp
    cdef unsigned char c
    cdef unsigned long long a, b

    if max_stack < 1:
        max_stack = 1
    stack = <unsigned long long *> malloc(max_stack * sizeof(unsigned long long))
    if stack is NULL:
        raise MemoryError()
    try:
        with nogil:
            for r in range(rows):
                sp = 0
                for i in range(n_ops):
                    c = codes[i]
                    if c == 0:    # const
                        stack[sp] = args[i] & mask
                        sp += 1
                    elif c == 1:  # var
                        stack[sp] = assigns[r, <Py_ssize_t> args[i]] & mask
                        sp += 1
                    elif c == 2:  # not
                        stack[sp - 1] = stack[sp - 1] ^ mask
                    elif c == 3:  # neg
                        stack[sp - 1] = ((stack[sp - 1] ^ mask) + 1) & mask
                    else:
                        b = stack[sp - 1]
                        a = stack[sp - 2]
                        sp -= 1
                        if c == 4:
                            stack[sp - 1] = (a + b) & mask
                        elif c == 5:
                            stack[sp - 1] = (a - b) & mask
                        elif c == 6:
                            stack[sp - 1] = (a * b) & mask
                        elif c == 7:
                            stack[sp - 1] = a & b
                        elif c == 8:
                            stack[sp - 1] = a | b
                        else:
                            stack[sp - 1] = a ^ b
                out_v[r] = stack[0]
    finally:
        free(stack)
    return out
