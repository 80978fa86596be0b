fn main() {
    std::process::exit(transitive_embed::cli::main_with_args(std::env::args_os()));
}
