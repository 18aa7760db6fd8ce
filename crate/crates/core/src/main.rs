fn main() {
    std::process::exit(skyeye_forge::cli::run(std::env::args_os()));
}
