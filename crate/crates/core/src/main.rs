fn main() {
    std::process::exit(scad_spline::cli::main_with_args(std::env::args_os()));
}
