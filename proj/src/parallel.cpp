#include "latent_lens/parallel.hpp"

namespace latent_lens {

namespace {
std::atomic<int> g_worker_limit{0};
}

int worker_limit()
{
    const int limit = g_worker_limit.load();
    if (limit > 0) {
        return limit;
    }
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

void set_worker_limit(int threads) { g_worker_limit.store(threads > 0 ? threads : 0); }

} // namespace latent_lens
