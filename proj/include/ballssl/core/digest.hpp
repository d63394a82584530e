#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

#include <openssl/evp.h>
#include <zlib.h>

namespace ballssl {

/// Lower-case hex SHA-256 of `text`.
inline std::string sha256_hex(std::string_view text) {
	unsigned char md[EVP_MAX_MD_SIZE];
	unsigned int len = 0;
	if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
		throw std::runtime_error("sha256 failed");
	static constexpr char hex[] = "0123456789abcdef";
	std::string out;
	out.reserve(2 * len);
	for (unsigned int i = 0; i < len; ++i) {
		out.push_back(hex[md[i] >> 4]);
		out.push_back(hex[md[i] & 0xf]);
	}
	return out;
}

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
	uLong crc = crc32(0L, Z_NULL, 0);
	// zlib takes uInt lengths; feed in chunks
	std::size_t off = 0;
	while (off < bytes.size()) {
		const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
		crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
		off += n;
	}
	return static_cast<std::uint32_t>(crc);
}

}  // namespace ballssl
