#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace sgalign::kernels {

// Flat float64 kernels behind the tensor ops. Every entry has a scalar
// reference implementation plus SIMD variants (AVX2 on x86-64, NEON on
// aarch64) selected once at startup. SIMD variants may reassociate
// reductions; equivalence against the scalar path is covered by tests with
// condition-aware tolerances.
struct Kernels {
    const char* name;

    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    void (*scale)(const double* a, double s, double* out, std::size_t n);
    double (*sum)(const double* a, std::size_t n);
    // n >= 1
    double (*max)(const double* a, std::size_t n);
};

const Kernels& scalar_kernels();

// All variants usable on this machine (scalar first), for equivalence tests.
std::vector<const Kernels*> available_kernels();

// The active set. Defaults to the widest variant the CPU supports.
const Kernels& active();

// Override the active set by name ("auto", "scalar", "avx2", "neon").
// Unknown or unsupported names fall back to auto selection and return false.
bool select_kernels(const std::string& name);

} // namespace sgalign::kernels
