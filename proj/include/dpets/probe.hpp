#ifndef DPETS_PROBE_HPP
#define DPETS_PROBE_HPP

#include <map>
#include <string>

namespace dpets {

// Records which mode-specific code paths ran. Optional everywhere; pass
// nullptr to disable.
struct PathProbe {
    std::map<std::string, long> hits;

    void hit(const std::string& path) { ++hits[path]; }
    long count(const std::string& path) const
    {
        auto it = hits.find(path);
        return it == hits.end() ? 0 : it->second;
    }
};

inline void probe_hit(PathProbe* probe, const char* path)
{
    if (probe)
        probe->hit(path);
}

} // namespace dpets

#endif
