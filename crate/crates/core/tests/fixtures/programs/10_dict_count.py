from collections import Counter


def histogram(text):
    counts = {}
    for word in text.split():
        counts[word] = counts.get(word, 0) + 1
    return counts


data = input()
hist = histogram(data)
for key in sorted(hist):
    print(key, hist[key])
print(Counter(data.split()).most_common(1))
