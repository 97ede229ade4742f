#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <qbayes/tensor.hpp>

namespace qbayes {

// Shortest round-trip decimal form; locale-independent, so identical values
// always serialize to identical bytes.
std::string format_double(double v);

void write_csv(const std::string& path, const std::vector<std::string>& header, const Mat& data);
Mat read_csv_matrix(const std::string& path);  // headerless numeric table
void write_text(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
void append_line(const std::string& path, const std::string& line);
void ensure_dir(const std::string& path);

std::uint64_t fnv1a(std::string_view bytes);
std::string fnv1a_hex(std::string_view bytes);

}  // namespace qbayes
