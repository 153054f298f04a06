def area(width,
         height,
         scale=1):
    return width * height * scale


result = area(
    3,
    4,
    scale=2,
)
print(result)
values = [
    area(1, 1),
    area(2, 2),
]
print(values)
