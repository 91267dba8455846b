#pragma once

#include <cstddef>
#include <cstdint>

namespace physiolite {

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320).
inline uint32_t crc32(const void* bytes, size_t n, uint32_t seed = 0) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    uint32_t crc = seed ^ 0xFFFFFFFFu;
    const auto* p = static_cast<const uint8_t*>(bytes);
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

}  // namespace physiolite
