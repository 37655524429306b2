#include "bsdelab/csv.hpp"

#include <cstdio>
#include <stdexcept>

namespace bsdelab {

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for writing: " + path);
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out_ << ',';
        out_ << header[i];
    }
    out_ << '\n';
}

void CsvWriter::cell(const std::string& s) {
    if (rowStarted_) out_ << ',';
    out_ << s;
    rowStarted_ = true;
}

void CsvWriter::cell(double v) { cell(format_double(v)); }

void CsvWriter::cell(std::int64_t v) { cell(std::to_string(v)); }

void CsvWriter::end_row() {
    out_ << '\n';
    rowStarted_ = false;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for checksum: " + path);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001B3ULL;
        }
    }
    return h;
}

}  // namespace bsdelab
