#include "naturalfinger/util.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace nf {

std::string sha256_hex(std::string_view bytes) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    const std::string digest = sha256_hex(std::to_string(base) + ":" + std::string(tag));
    return std::stoull(digest.substr(0, 16), nullptr, 16);
}

std::string json_hash(const nlohmann::json& j) { return sha256_hex(j.dump()); }

void atomic_write(const std::filesystem::path& path, std::string_view contents) {
    static std::atomic<unsigned> counter{0};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ostringstream suffix;
    suffix << ".tmp." << std::this_thread::get_id() << "." << counter++;
    const auto tmp = std::filesystem::path(path.string() + suffix.str());
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write " + tmp.string());
        os.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!os) throw std::runtime_error("short write on " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

nlohmann::json read_json(const std::filesystem::path& path) {
    return nlohmann::json::parse(read_file(path));
}

std::string pretty(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace nf
