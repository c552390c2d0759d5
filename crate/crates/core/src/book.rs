//! Compiles the code samples of the guide in `book/src` as doc-tests.

macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $name {}
        )*
    };
}

chapters! {
    introduction => "introduction.md",
    functions => "functions.md",
    descent => "descent.md",
    flow => "flow.md",
    experiments => "experiments.md",
    cli => "cli.md",
}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
