#include "sgalign/kernels.hpp"

namespace sgalign::kernels {

#if defined(__x86_64__) || defined(__i386__)
const Kernels* avx2_kernels_impl();
#endif
#if defined(__aarch64__)
const Kernels* neon_kernels_impl();
#endif

namespace {

const Kernels* detect_best() {
#if defined(__x86_64__) || defined(__i386__)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        return avx2_kernels_impl();
    }
#endif
#if defined(__aarch64__)
    return neon_kernels_impl();
#endif
    return &scalar_kernels();
}

const Kernels*& active_slot() {
    static const Kernels* slot = detect_best();
    return slot;
}

} // namespace

std::vector<const Kernels*> available_kernels() {
    std::vector<const Kernels*> out{&scalar_kernels()};
#if defined(__x86_64__) || defined(__i386__)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        out.push_back(avx2_kernels_impl());
    }
#endif
#if defined(__aarch64__)
    out.push_back(neon_kernels_impl());
#endif
    return out;
}

const Kernels& active() { return *active_slot(); }

bool select_kernels(const std::string& name) {
    if (name == "auto" || name.empty()) {
        active_slot() = detect_best();
        return true;
    }
    for (const Kernels* k : available_kernels()) {
        if (name == k->name) {
            active_slot() = k;
            return true;
        }
    }
    active_slot() = detect_best();
    return false;
}

} // namespace sgalign::kernels
