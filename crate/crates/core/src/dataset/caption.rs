use super::motion::MotionType;
use super::scene::SceneSpec;

/// Canonical lowercase caption for a scene.
///
/// One digit: `digit 9 is moving down then up`. Two digits:
/// `digit 7 moves right then left while digit 3 moves down then up`.
pub fn caption(spec: &SceneSpec) -> String {
    caption_for(&spec.digits, &spec.motions)
}

pub fn caption_for(digits: &[u8], motions: &[MotionType]) -> String {
    match (digits, motions) {
        ([d], [m]) => format!("digit {d} is moving {}", m.phrase()),
        ([a, b], [ma, mb]) => format!(
            "digit {a} moves {} while digit {b} moves {}",
            ma.phrase(),
            mb.phrase()
        ),
        _ => panic!("caption_for: 1 or 2 digits with one motion each"),
    }
}

/// Inverse of [`caption_for`]; `None` for text outside the templates.
pub fn parse_caption(text: &str) -> Option<(Vec<u8>, Vec<MotionType>)> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let digit = |w: &str| -> Option<u8> { w.parse::<u8>().ok().filter(|&d| d <= 9 && w.len() == 1) };
    let motion = |ws: &[&str]| MotionType::from_phrase(&ws.join(" "));
    match words.as_slice() {
        ["digit", d, "is", "moving", rest @ ..] if rest.len() == 3 => Some((vec![digit(d)?], vec![motion(rest)?])),
        ["digit", a, "moves", m1 @ .., "while", "digit", b, "moves", x, y, z] if m1.len() == 3 => Some((
            vec![digit(a)?, digit(b)?],
            vec![motion(m1)?, motion(&[x, y, z])?],
        )),
        _ => None,
    }
}
