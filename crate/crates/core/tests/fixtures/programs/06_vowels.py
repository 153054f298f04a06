VOWELS = set("aeiou")


def count_vowels(text):
    n = 0
    for ch in text.lower():
        if ch in VOWELS:
            n += 1
    return n


s = input()
print(count_vowels(s))
