line = input()
words = line.split()
words.reverse()
result = " ".join(words)
print(result)
print(len(words))
