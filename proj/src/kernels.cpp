#include "cfmlab/kernels.hpp"

#include <cstdlib>
#include <stdexcept>

namespace cfmlab::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}

const Ops* initial_ops() {
    const char* env = std::getenv("CFMLAB_KERNELS");
    if (env != nullptr) {
        Backend b = parse_backend(env);
        if (!backend_available(b)) throw std::runtime_error("CFMLAB_KERNELS backend unavailable");
        return b == Backend::scalar ? &scalar_ops :
#if defined(__x86_64__)
                                      &avx2_ops;
#else
                                      &scalar_ops;
#endif
    }
#if defined(__x86_64__)
    if (cpu_has_avx2()) return &avx2_ops;
#endif
    return &scalar_ops;
}

const Ops*& active_ptr() {
    static const Ops* ops = initial_ops();
    return ops;
}

}  // namespace

const Ops& active() { return *active_ptr(); }

bool backend_available(Backend b) {
    switch (b) {
        case Backend::scalar: return true;
        case Backend::avx2: return cpu_has_avx2();
    }
    return false;
}

void use(Backend b) {
    if (!backend_available(b)) throw std::runtime_error("requested kernel backend unavailable");
    switch (b) {
        case Backend::scalar: active_ptr() = &scalar_ops; break;
        case Backend::avx2:
#if defined(__x86_64__)
            active_ptr() = &avx2_ops;
#endif
            break;
    }
}

Backend parse_backend(const std::string& name) {
    if (name == "scalar") return Backend::scalar;
    if (name == "avx2") return Backend::avx2;
    throw std::runtime_error("unknown kernel backend: " + name);
}

}  // namespace cfmlab::kernels
