fn main() {
    println!("spinemesh");
}
