#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ballssl/core/digest.hpp"
#include "ballssl/nn/parameter.hpp"

// File layout (all integers little-endian):
//   "BSSLCKPT" | u32 schema_version | u32 header_len | header JSON | payload
// header JSON: {schema_version, config_digest, payload_bytes, payload_crc32, provenance}
// payload:     u32 count, then per array: u32 name_len, name, u32 rank, u64 dims[rank], f32 values

namespace ballssl {

inline constexpr std::uint32_t kCheckpointSchemaVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'B', 'S', 'S', 'L', 'C', 'K', 'P', 'T'};

class CheckpointError : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};
class IncompatibleCheckpoint : public CheckpointError {
public:
	using CheckpointError::CheckpointError;
};
class IntegrityError : public CheckpointError {
public:
	using CheckpointError::CheckpointError;
};

struct Provenance {
	std::string task;
	int epochs = 0;
	std::uint64_t seed = 0;
	std::string config_digest;

	friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct NamedArray {
	std::string name;
	Shape shape;
	std::vector<float> values;

	friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
	std::uint32_t schema_version = kCheckpointSchemaVersion;
	Provenance provenance;
	std::vector<NamedArray> arrays;

	const NamedArray* find(std::string_view name) const {
		for (const auto& a : arrays)
			if (a.name == name) return &a;
		return nullptr;
	}

	friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
	for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
	for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

class Reader {
public:
	Reader(const unsigned char* data, std::size_t size) : data_(data), size_(size) { }
	const unsigned char* take(std::size_t n) {
		if (n > size_ - pos_) throw IntegrityError("checkpoint truncated");
		const auto* p = data_ + pos_;
		pos_ += n;
		return p;
	}
	std::uint32_t u32() {
		const auto* p = take(4);
		std::uint32_t v = 0;
		for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
		return v;
	}
	std::uint64_t u64() {
		const auto* p = take(8);
		std::uint64_t v = 0;
		for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
		return v;
	}
	std::size_t remaining() const { return size_ - pos_; }
	std::size_t position() const { return pos_; }

private:
	const unsigned char* data_;
	std::size_t size_;
	std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt) {
	std::vector<unsigned char> payload;
	detail::put_u32(payload, static_cast<std::uint32_t>(ckpt.arrays.size()));
	for (const auto& a : ckpt.arrays) {
		if (a.values.size() != volume(a.shape)) throw ShapeError("array " + a.name + " does not match its shape");
		detail::put_u32(payload, static_cast<std::uint32_t>(a.name.size()));
		payload.insert(payload.end(), a.name.begin(), a.name.end());
		detail::put_u32(payload, static_cast<std::uint32_t>(a.shape.size()));
		for (auto d : a.shape) detail::put_u64(payload, d);
		for (float f : a.values) detail::put_u32(payload, std::bit_cast<std::uint32_t>(f));
	}
	const nlohmann::json header = {
			{"schema_version", ckpt.schema_version},
			{"config_digest", ckpt.provenance.config_digest},
			{"payload_bytes", payload.size()},
			{"payload_crc32", crc32_of(payload)},
			{"provenance",
					{{"task", ckpt.provenance.task},
							{"epochs", ckpt.provenance.epochs},
							{"seed", ckpt.provenance.seed},
							{"config_digest", ckpt.provenance.config_digest}}}};
	const std::string header_text = header.dump();

	std::vector<unsigned char> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
	detail::put_u32(out, ckpt.schema_version);
	detail::put_u32(out, static_cast<std::uint32_t>(header_text.size()));
	out.insert(out.end(), header_text.begin(), header_text.end());
	out.insert(out.end(), payload.begin(), payload.end());
	return out;
}

inline Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
	detail::Reader r(bytes.data(), bytes.size());
	if (std::memcmp(r.take(8), kCheckpointMagic, 8) != 0) throw CheckpointError("not a checkpoint file (bad magic)");
	Checkpoint ckpt;
	ckpt.schema_version = r.u32();
	if (ckpt.schema_version != kCheckpointSchemaVersion)
		throw IncompatibleCheckpoint("checkpoint schema version " + std::to_string(ckpt.schema_version) +
				" is incompatible with supported version " + std::to_string(kCheckpointSchemaVersion));
	const std::uint32_t header_len = r.u32();
	const auto* header_ptr = r.take(header_len);
	nlohmann::json header;
	try {
		header = nlohmann::json::parse(header_ptr, header_ptr + header_len);
	} catch (const nlohmann::json::exception& e) {
		throw IntegrityError(std::string("corrupt checkpoint header: ") + e.what());
	}
	try {
		const auto& p = header.at("provenance");
		ckpt.provenance = {p.at("task").get<std::string>(), p.at("epochs").get<int>(), p.at("seed").get<std::uint64_t>(),
				p.at("config_digest").get<std::string>()};
		if (header.at("schema_version").get<std::uint32_t>() != ckpt.schema_version)
			throw IntegrityError("header schema version disagrees with preamble");
		const auto payload_bytes = header.at("payload_bytes").get<std::size_t>();
		if (payload_bytes != r.remaining())
			throw IntegrityError("checkpoint payload is " + std::to_string(r.remaining()) + " bytes, header says " +
					std::to_string(payload_bytes));
		const auto crc = header.at("payload_crc32").get<std::uint32_t>();
		const std::size_t start = r.position();
		if (crc32_of({bytes.data() + start, bytes.size() - start}) != crc) throw IntegrityError("checkpoint checksum mismatch");
	} catch (const nlohmann::json::exception& e) {
		throw IntegrityError(std::string("malformed checkpoint header: ") + e.what());
	}

	const std::uint32_t count = r.u32();
	for (std::uint32_t i = 0; i < count; ++i) {
		NamedArray a;
		const std::uint32_t name_len = r.u32();
		const auto* name = r.take(name_len);
		a.name.assign(reinterpret_cast<const char*>(name), name_len);
		const std::uint32_t rank = r.u32();
		for (std::uint32_t k = 0; k < rank; ++k) a.shape.push_back(r.u64());
		const std::size_t n = volume(a.shape);
		if (n > r.remaining() / 4) throw IntegrityError("array " + a.name + " exceeds payload");
		a.values.resize(n);
		for (auto& v : a.values) v = std::bit_cast<float>(r.u32());
		ckpt.arrays.push_back(std::move(a));
	}
	if (r.remaining() != 0) throw IntegrityError("trailing bytes after checkpoint payload");
	return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
	const auto bytes = serialize_checkpoint(ckpt);
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out) throw CheckpointError("cannot write " + path.string());
	out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
	if (!out) throw CheckpointError("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
	std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
	return deserialize_checkpoint(bytes);
}

/// Appends every parameter as a float32 array under its own name.
template<typename Scalar>
void export_parameters(const nn::ParameterList<Scalar>& params, Checkpoint& ckpt) {
	for (const auto* p : params) {
		NamedArray a{p->name, p->value.shape(), {}};
		a.values.assign(p->value.storage().begin(), p->value.storage().end());
		ckpt.arrays.push_back(std::move(a));
	}
}

/**
 * Copies arrays into every parameter whose name starts with `prefix`. Throws
 * IncompatibleCheckpoint when such a parameter is missing or has another shape.
 * Returns the number of parameters loaded.
 */
template<typename Scalar>
std::size_t import_parameters(const nn::ParameterList<Scalar>& params, const Checkpoint& ckpt,
		std::string_view prefix = "") {
	std::size_t loaded = 0;
	for (auto* p : params) {
		if (!std::string_view(p->name).starts_with(prefix)) continue;
		const NamedArray* a = ckpt.find(p->name);
		if (!a) throw IncompatibleCheckpoint("checkpoint has no array " + p->name);
		if (a->shape != p->value.shape())
			throw IncompatibleCheckpoint("array " + p->name + " has shape " + shape_string(a->shape) + ", model expects " +
					shape_string(p->value.shape()));
		for (std::size_t i = 0; i < a->values.size(); ++i) p->value[i] = static_cast<Scalar>(a->values[i]);
		++loaded;
	}
	return loaded;
}

}  // namespace ballssl
