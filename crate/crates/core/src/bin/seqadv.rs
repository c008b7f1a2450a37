fn main() {
    std::process::exit(seqadv::cli::run(std::env::args_os()));
}
