int kernel_main(int argc, char **argv) {
    ten_t x
    return ten_load(argv[1], &x);
}
