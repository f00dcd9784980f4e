#pragma once

#include <cstddef>
#include <functional>

namespace sasq {

// Worker count used by the row-parallel kernels.  Defaults to 1; the CLI
// sets it from --threads.  Results are bit-identical for any count because
// work is only ever split across output rows.
void set_threads(int n);
int threads();

// Runs fn(begin, end) over disjoint row ranges covering [0, rows).  Falls
// back to a single inline call when rows is small or one thread is set.
void parallel_for_rows(size_t rows, size_t grain,
                       const std::function<void(size_t, size_t)>& fn);

}  // namespace sasq
