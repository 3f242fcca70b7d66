#include "fpad/fsutil.hpp"

#include "fpad/error.hpp"

#include <unistd.h>

#include <atomic>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace fpad {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("read failed: " + path.string());
    return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view contents) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = path;
    static std::atomic<unsigned long> counter{0};
    tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("cannot replace " + path.string() + ": " + ec.message());
    }
}

std::string relative_generic(const fs::path& target, const fs::path& base) {
    std::error_code ec;
    fs::path abs_target = fs::weakly_canonical(target, ec);
    if (ec) abs_target = fs::absolute(target);
    fs::path abs_base = fs::weakly_canonical(base, ec);
    if (ec) abs_base = fs::absolute(base);
    return abs_target.lexically_relative(abs_base).generic_string();
}

}  // namespace fpad
