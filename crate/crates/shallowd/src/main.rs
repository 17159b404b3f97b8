fn main() {
    std::process::exit(shallowd::pipeline::cli::run());
}
